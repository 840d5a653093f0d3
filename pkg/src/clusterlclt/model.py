"""Lattice volumes, couplings, single-site measures, boundary conditions and Hamiltonians.

Everything here is immutable after construction.  Sites are tuples of integers
(points of Z^d) and every volume keeps them in lexicographic order.

Pair sums use the unordered-pair convention

    H(sigma) = - sum_{{x,y} in V} J_xy s_x s_y - sum_{x in V} s_x sum_{y notin V} J_xy w_y

so that exp(-beta H) carries exactly one factor exp(beta J_xy s_x s_y) per
unordered pair, matching one Mayer factor per bond in the polymer expansion.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    SizeError,
    TemperednessError,
)

Site = tuple[int, ...]

DEFAULT_SITE_CAP = 64
DEFAULT_NODES = 64
POWER_LAW_HORIZON = {1: 10**6, 2: 1000, 3: 60}


# ---------------------------------------------------------------------------
# Volumes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeVolume:
    dimension: int
    k: int
    sites: tuple[Site, ...]
    r0: int = 1
    diluted_sites: tuple[Site, ...] = ()

    def __post_init__(self):
        if not self.diluted_sites:
            object.__setattr__(self, "diluted_sites", _diluted(self.sites, self.r0))

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def interior_sites(self) -> tuple[Site, ...]:
        """Sites of the volume that are not on the diluted sublattice."""
        keep = set(self.diluted_sites)
        return tuple(x for x in self.sites if x not in keep)

    def index(self) -> dict[Site, int]:
        return {x: i for i, x in enumerate(self.sites)}

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "k": self.k,
            "r0": self.r0,
            "sites": [list(x) for x in self.sites],
        }


def _diluted(sites: Sequence[Site], r0: int) -> tuple[Site, ...]:
    return tuple(x for x in sites if all(c % r0 == 0 for c in x))


def build_volume(d: int, k: int, r0: int = 1, site_cap: int = DEFAULT_SITE_CAP) -> LatticeVolume:
    """The cube [-k, k]^d with its sites in lexicographic order."""
    if d <= 0 or k <= 0:
        raise ValueError(f"dimension and radius must be positive (got d={d}, k={k})")
    if r0 <= 0:
        raise ValueError(f"dilution r0 must be a positive integer (got {r0})")
    n = (2 * k + 1) ** d
    if n > site_cap:
        raise SizeError(f"volume has {n} sites, exceeding the site cap of {site_cap}")
    sites = tuple(itertools.product(range(-k, k + 1), repeat=d))
    return LatticeVolume(dimension=d, k=k, sites=sites, r0=r0)


def volume_from_sites(
    sites: Sequence[Sequence[int]], r0: int = 1, site_cap: int = DEFAULT_SITE_CAP
) -> LatticeVolume:
    """A volume with an explicit (not necessarily cubic) site set."""
    if r0 <= 0:
        raise ValueError(f"dilution r0 must be a positive integer (got {r0})")
    pts = sorted({tuple(int(c) for c in x) for x in sites})
    if not pts:
        raise ValueError("a volume needs at least one site")
    if len(pts) > site_cap:
        raise SizeError(f"volume has {len(pts)} sites, exceeding the site cap of {site_cap}")
    dims = {len(x) for x in pts}
    if len(dims) != 1:
        raise ValueError("all sites must have the same dimension")
    k = max(max(abs(c) for c in x) for x in pts)
    return LatticeVolume(dimension=dims.pop(), k=max(k, 1), sites=tuple(pts), r0=r0)


def chain_volume(n: int, r0: int = 1) -> LatticeVolume:
    """The one-dimensional chain {0, 1, ..., n-1}."""
    return volume_from_sites([(i,) for i in range(n)], r0=r0)


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _power_lattice_sum(d: int, s: float, horizon: int) -> tuple[float, float]:
    """Bracket for sum_{z in Z^d, z != 0} |z|^{-s} (Euclidean norm)."""
    if s <= d:
        raise DivergenceError(f"power-law couplings need s > d for absolute summability (s={s}, d={d})")
    if d == 1:
        n = np.arange(horizon, 0, -1, dtype=float)  # small terms first
        partial = float(np.sum(n ** (-s)))
        lo = partial + (horizon + 1) ** (1.0 - s) / (s - 1.0)
        hi = partial + horizon ** (1.0 - s) / (s - 1.0)
        return 2.0 * lo, 2.0 * hi
    axis = np.arange(-horizon, horizon + 1, dtype=float)
    grids = np.meshgrid(*([axis] * d), indexing="ij", sparse=True)
    r2 = sum(g * g for g in grids)
    r2 = np.where(r2 == 0, np.inf, r2)
    partial = float(np.sum(r2 ** (-s / 2.0)))
    # shells |z|_inf = m > H hold at most 2d(2m+1)^{d-1} points with |z| >= m
    tail = 2 * d * (2.0 + 1.0 / horizon) ** (d - 1) * horizon ** (d - s) / (s - d)
    return partial, partial + tail


def _inf_norm(z: Sequence[int]) -> int:
    return max(abs(c) for c in z) if len(z) else 0


@dataclass(frozen=True, eq=False)
class CouplingField:
    """Symmetric two-body couplings J_xy.

    kind is one of ``finite_range`` (translation-invariant table over
    displacements), ``power_law`` (J0 |x-y|^{-s}) or ``custom`` (explicit
    unordered pairs, zero elsewhere).
    """

    kind: str
    dimension: int
    table: Mapping[Site, float] = field(default_factory=dict)
    J0: float = 0.0
    s: float = 0.0
    pairs: Mapping[frozenset, float] = field(default_factory=dict)
    horizon: int | None = None

    def __post_init__(self):
        if self.kind not in ("finite_range", "power_law", "custom"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "finite_range":
            sym = {}
            for z, val in self.table.items():
                z = tuple(int(c) for c in z)
                if len(z) != self.dimension:
                    raise ValueError(f"displacement {z} does not have dimension {self.dimension}")
                if not any(z):
                    raise ValueError("self-couplings J_xx are not allowed")
                mz = tuple(-c for c in z)
                if mz in sym and sym[mz] != val:
                    raise ValueError(f"asymmetric table entries for {z} and {mz}")
                sym[z] = float(val)
                sym[mz] = float(val)
            object.__setattr__(self, "table", {z: v for z, v in sym.items() if v != 0.0})
        elif self.kind == "power_law":
            if self.s <= self.dimension:
                raise DivergenceError(
                    f"power-law couplings need s > d for absolute summability (s={self.s}, d={self.dimension})"
                )
            if self.horizon is None:
                object.__setattr__(self, "horizon", POWER_LAW_HORIZON.get(self.dimension, 20))
        else:
            clean = {}
            for key, val in self.pairs.items():
                pair = frozenset(tuple(int(c) for c in x) for x in key)
                if len(pair) != 2:
                    raise ValueError("custom couplings are defined on pairs of distinct sites")
                if pair in clean and clean[pair] != val:
                    raise ValueError(f"conflicting entries for pair {sorted(pair)}")
                if val != 0.0:
                    clean[pair] = float(val)
            object.__setattr__(self, "pairs", clean)

    # constructors ---------------------------------------------------------

    @classmethod
    def zero(cls, d: int) -> "CouplingField":
        return cls("finite_range", d, table={})

    @classmethod
    def nearest_neighbor(cls, J: float, d: int) -> "CouplingField":
        table = {}
        for axis in range(d):
            e = [0] * d
            e[axis] = 1
            table[tuple(e)] = J
        return cls("finite_range", d, table=table)

    @classmethod
    def finite_range(cls, table: Mapping[Sequence[int], float], d: int) -> "CouplingField":
        return cls("finite_range", d, table={tuple(z): v for z, v in table.items()})

    @classmethod
    def power_law(cls, J0: float, s: float, d: int, horizon: int | None = None) -> "CouplingField":
        return cls("power_law", d, J0=float(J0), s=float(s), horizon=horizon)

    @classmethod
    def custom(cls, pairs: Mapping[Any, float], d: int) -> "CouplingField":
        return cls("custom", d, pairs=dict(pairs))

    # evaluation -----------------------------------------------------------

    def J(self, x: Site, y: Site) -> float:
        if x == y:
            return 0.0
        if self.kind == "finite_range":
            return self.table.get(tuple(b - a for a, b in zip(x, y)), 0.0)
        if self.kind == "power_law":
            r = math.sqrt(sum((b - a) ** 2 for a, b in zip(x, y)))
            return self.J0 * r ** (-self.s)
        return self.pairs.get(frozenset((tuple(x), tuple(y))), 0.0)

    def matrix(self, sites: Sequence[Site]) -> np.ndarray:
        n = len(sites)
        M = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                M[i, j] = M[j, i] = self.J(sites[i], sites[j])
        return M

    @property
    def is_zero(self) -> bool:
        if self.kind == "finite_range":
            return not self.table
        if self.kind == "power_law":
            return self.J0 == 0.0
        return not self.pairs

    @property
    def translation_invariant(self) -> bool:
        return self.kind != "custom"

    @property
    def range(self) -> float | None:
        """Largest sup-norm distance with J != 0 (None when unbounded)."""
        if self.kind == "finite_range":
            return max((_inf_norm(z) for z in self.table), default=0)
        if self.kind == "power_law":
            return 0 if self.J0 == 0.0 else None
        return max((_inf_norm(tuple(b - a for a, b in zip(*sorted(p)))) for p in self.pairs), default=0)

    def abs_sum_bracket(self, x: Site) -> tuple[float, float]:
        """Bracket (lo, hi) for sum_{y != x} |J_xy|."""
        if self.kind == "finite_range":
            v = float(sum(abs(j) for j in self.table.values()))
            return v, v
        if self.kind == "power_law":
            lo, hi = _power_lattice_sum(self.dimension, self.s, self.horizon)
            a = abs(self.J0)
            return a * lo, a * hi
        v = float(sum(abs(j) for p, j in self.pairs.items() if tuple(x) in p))
        return v, v

    def signed_sum(self, x: Site) -> float:
        """Best estimate of sum_{y != x} J_xy (bracket midpoint for power laws)."""
        if self.kind == "finite_range":
            return float(sum(self.table.values()))
        if self.kind == "power_law":
            lo, hi = _power_lattice_sum(self.dimension, self.s, self.horizon)
            return self.J0 * 0.5 * (lo + hi)
        return float(sum(j for p, j in self.pairs.items() if tuple(x) in p))

    def sublattice_abs_sum(self, x: Site, r0: int) -> float:
        """Pessimistic sum_{y in r0 Z^d, y != x} |J_xy| for x on the sublattice."""
        if self.kind == "finite_range":
            return float(sum(abs(j) for z, j in self.table.items() if all(c % r0 == 0 for c in z)))
        if self.kind == "power_law":
            return self.abs_sum_bracket(x)[1] * float(r0) ** (-self.s)
        total = 0.0
        for p, j in self.pairs.items():
            if tuple(x) in p:
                (y,) = tuple(p - {tuple(x)})
                if all(c % r0 == 0 for c in y):
                    total += abs(j)
        return total

    def to_dict(self) -> dict:
        if self.kind == "finite_range":
            return {"kind": "finite_range", "table": sorted([list(z) + [v] for z, v in self.table.items()])}
        if self.kind == "power_law":
            return {"kind": "power_law", "J0": self.J0, "s": self.s, "horizon": self.horizon}
        return {"kind": "custom", "pairs": sorted([sorted(list(x) for x in p) + [v] for p, v in self.pairs.items()])}


def coupling_sum(J: CouplingField, x: Site | None = None) -> float:
    """sum_{y != x} |J_xy|, the pessimistic end of the tail bracket for power laws."""
    if x is None:
        x = (0,) * J.dimension
    return J.abs_sum_bracket(tuple(x))[1]


# ---------------------------------------------------------------------------
# Single-site measures
# ---------------------------------------------------------------------------


def gauss_legendre_panels(lo: float, hi: float, n_nodes: int, breakpoints: Sequence[float] = ()):
    """Composite Gauss-Legendre rule on [lo, hi] split at the given breakpoints."""
    cuts = sorted({float(lo), float(hi), *(float(b) for b in breakpoints if lo < b < hi)})
    panels = len(cuts) - 1
    per = max(8, n_nodes // panels)
    x, w = np.polynomial.legendre.leggauss(per)
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _poly(coeffs: Sequence[float]) -> tuple[Callable, Callable]:
    p = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    dp = p.deriv()
    return (lambda s: p(np.asarray(s, dtype=float))), (lambda s: dp(np.asarray(s, dtype=float)))


@dataclass(frozen=True, eq=False)
class SingleSiteMeasure:
    """A-priori measure exp(-F(s)) ds (or counting measure for discrete support).

    ``nodes``/``weights`` form the quadrature rule against the base measure;
    the e^{-F} factor is applied separately.
    """

    support: str
    F: Callable[[np.ndarray], np.ndarray]
    dF: Callable[[np.ndarray], np.ndarray] | None
    A: float
    c: float
    nodes: np.ndarray
    weights: np.ndarray
    L: float | None = None
    R: float | None = None
    kinks: tuple[float, ...] = ()
    fprime_growth: float | None = None
    description: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.support not in ("real", "interval", "discrete"):
            raise ValueError(f"unknown support kind {self.support!r}")
        if self.A <= 0:
            raise ValueError("superstability constant A must be positive")
        f = self.F(self.nodes)
        slack = f - (self.A * self.nodes**2 - self.c)
        if np.any(slack < -1e-12 * (1.0 + np.abs(f))):
            i = int(np.argmin(slack))
            raise ValueError(
                f"F(s) >= A s^2 - c fails at node s={self.nodes[i]:.6g} (A={self.A}, c={self.c})"
            )
        mass = float(np.sum(self.weights * np.exp(-f)))
        if not np.isfinite(mass) or mass <= 0.0:
            raise ValueError("the a-priori measure must have finite positive mass")

    @property
    def bounded(self) -> bool:
        return self.support != "real"

    @property
    def is_discrete(self) -> bool:
        return self.support == "discrete"

    @property
    def spin_bound(self) -> float:
        """R for bounded supports, inf otherwise."""
        if self.support == "real":
            return math.inf
        return float(self.R)

    def base_weights(self) -> np.ndarray:
        """Quadrature weights of the a-priori measure, w_i exp(-F(s_i))."""
        return self.weights * np.exp(-self.F(self.nodes))

    def contains(self, value: float, tol: float = 1e-12) -> bool:
        if not np.isfinite(value):
            return False
        if self.support == "real":
            return True
        if self.support == "interval":
            return abs(value) <= self.R + tol
        return bool(np.any(np.abs(self.nodes - value) <= tol))

    def to_dict(self) -> dict:
        d = dict(self.description)
        d.update({"A": self.A, "c": self.c, "nodes": int(len(self.nodes))})
        if self.L is not None:
            d["L"] = self.L
        return d

    # constructors ---------------------------------------------------------

    @classmethod
    def polynomial(
        cls,
        coefficients: Sequence[float],
        A: float | None = None,
        c: float | None = None,
        nodes: int = DEFAULT_NODES,
        L: float | None = None,
        fprime_growth: float | None = None,
    ) -> "SingleSiteMeasure":
        """Unbounded spins with F(s) = sum_k coefficients[k] s^k."""
        coefficients = [float(v) for v in coefficients]
        deg = len(coefficients) - 1
        while deg > 0 and coefficients[deg] == 0.0:
            deg -= 1
        if deg < 2 or deg % 2 or coefficients[deg] <= 0:
            raise ValueError("F must be a polynomial of even degree >= 2 with positive leading coefficient")
        if A is None:
            if deg == 2:
                A = coefficients[2]
            else:
                A = max(coefficients[2], 1.0) if len(coefficients) > 2 else 1.0
        F, dF = _poly(coefficients)
        if L is None:
            L = 8.0 / math.sqrt(A)
        x, w = gauss_legendre_panels(-L, L, nodes, breakpoints=(0.0,))
        if c is None:
            dense = np.linspace(-L, L, 20001)
            c = max(0.0, float(np.max(A * dense**2 - F(dense))))
            c = max(c, float(np.max(A * x**2 - F(x))))
        return cls(
            "real", F, dF, float(A), float(c), x, w, L=float(L),
            fprime_growth=fprime_growth,
            description={"kind": "polynomial", "coefficients": coefficients},
        )

    @classmethod
    def gaussian(cls, variance: float = 1.0, A: float | None = None, nodes: int = DEFAULT_NODES,
                 L: float | None = None) -> "SingleSiteMeasure":
        """F(s) = s^2 / (2 variance) (not normalized)."""
        a = 1.0 / (2.0 * variance)
        m = cls.polynomial([0.0, 0.0, a], A=a if A is None else A, c=0.0, nodes=nodes, L=L)
        return replace(m, description={"kind": "gaussian", "variance": float(variance)})

    @classmethod
    def bounded_polynomial(
        cls,
        R: float = 1.0,
        coefficients: Sequence[float] = (0.0,),
        A: float | None = None,
        c: float | None = None,
        nodes: int = DEFAULT_NODES,
    ) -> "SingleSiteMeasure":
        """Continuous spins on [-R, R] with polynomial F."""
        F, dF = _poly(coefficients)
        if A is None:
            A = 1.0 / R**2
        x, w = gauss_legendre_panels(-R, R, nodes, breakpoints=(0.0,))
        if c is None:
            dense = np.linspace(-R, R, 20001)
            c = max(0.0, float(np.max(A * dense**2 - F(dense))), float(np.max(A * x**2 - F(x))))
        return cls(
            "interval", F, dF, float(A), float(c), x, w, R=float(R),
            description={"kind": "bounded_polynomial", "R": float(R), "coefficients": [float(v) for v in coefficients]},
        )

    @classmethod
    def uniform(cls, R: float = 1.0, nodes: int = DEFAULT_NODES) -> "SingleSiteMeasure":
        m = cls.bounded_polynomial(R, (0.0,), nodes=nodes)
        return replace(m, description={"kind": "uniform", "R": float(R)})

    @classmethod
    def discrete(cls, points: Sequence[float], F_values: Sequence[float] | None = None,
                 A: float | None = None, c: float | None = None) -> "SingleSiteMeasure":
        pts = np.asarray(sorted(float(p) for p in points))
        if len(pts) < 2 or len(set(pts.tolist())) != len(pts):
            raise ValueError("discrete support needs at least two distinct points")
        fv = np.zeros_like(pts) if F_values is None else np.asarray(F_values, dtype=float)
        order = np.argsort(np.asarray(points, dtype=float)) if F_values is not None else None
        if order is not None:
            fv = fv[order]
        table = dict(zip(pts.tolist(), fv.tolist()))

        def F(s):
            s = np.asarray(s, dtype=float)
            out = np.empty(s.shape)
            for idx, v in np.ndenumerate(s):
                j = int(np.argmin(np.abs(pts - v)))
                if abs(pts[j] - v) > 1e-9:
                    raise DomainError(f"spin value {v} is not in the discrete support")
                out[idx] = table[pts[j]]
            return out

        R = float(np.max(np.abs(pts)))
        if A is None:
            A = 1.0 / R**2 if R > 0 else 1.0
        if c is None:
            c = max(0.0, float(np.max(A * pts**2 - fv)))
        return cls(
            "discrete", F, None, float(A), float(c), pts, np.ones_like(pts), R=R,
            description={"kind": "discrete", "points": pts.tolist(), "F": fv.tolist()},
        )

    @classmethod
    def ising(cls) -> "SingleSiteMeasure":
        m = cls.discrete([-1.0, 1.0])
        return replace(m, description={"kind": "ising"})


# ---------------------------------------------------------------------------
# Boundary conditions and the model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Exterior configuration omega: ``free`` (0), ``constant`` or ``custom``.

    A custom boundary is a finite map site -> value on top of a constant
    ``default`` (0 unless given).
    """

    kind: str = "free"
    value: float = 0.0
    values: Mapping[Site, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("free", "constant", "custom"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        vals = {tuple(int(c) for c in x): float(v) for x, v in self.values.items()}
        bad = [x for x, v in vals.items() if not np.isfinite(v)]
        if bad or not np.isfinite(self.value):
            raise TemperednessError("boundary values must be finite to be strongly tempered")
        object.__setattr__(self, "values", vals)
        if self.kind == "free":
            object.__setattr__(self, "value", 0.0)

    @classmethod
    def free(cls) -> "BoundaryCondition":
        return cls("free")

    @classmethod
    def constant(cls, value: float) -> "BoundaryCondition":
        return cls("constant", value=float(value))

    @classmethod
    def custom(cls, values: Mapping[Site, float], default: float = 0.0) -> "BoundaryCondition":
        return cls("custom", value=float(default), values=dict(values))

    def at(self, y: Site) -> float:
        return self.values.get(tuple(y), self.value)

    def scaled(self, lam: float) -> "BoundaryCondition":
        return replace(self, value=self.value * lam, values={x: v * lam for x, v in self.values.items()})

    def merged(self, interior: Mapping[Site, float]) -> "BoundaryCondition":
        """omega v omega': interior values override, everything else unchanged."""
        if not interior:
            return self
        vals = dict(self.values)
        vals.update({tuple(x): float(v) for x, v in interior.items()})
        return BoundaryCondition("custom", value=self.value, values=vals)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind != "free":
            d["value"] = self.value
        if self.values:
            d["values"] = sorted([list(x) + [v] for x, v in self.values.items()])
        return d


@dataclass(frozen=True, eq=False)
class ModelInstance:
    volume: LatticeVolume
    couplings: CouplingField
    site_measure: SingleSiteMeasure
    boundary: BoundaryCondition
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("inverse temperature beta must be positive")
        if self.couplings.dimension != self.volume.dimension:
            raise ValueError("coupling dimension does not match the volume")

    def with_beta(self, beta: float) -> "ModelInstance":
        return replace(self, beta=float(beta))

    def with_volume(self, volume: LatticeVolume) -> "ModelInstance":
        return replace(self, volume=volume)

    def to_dict(self) -> dict:
        return {
            "volume": self.volume.to_dict(),
            "coupling": self.couplings.to_dict(),
            "measure": self.site_measure.to_dict(),
            "boundary": self.boundary.to_dict(),
            "beta": self.beta,
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON form; stable under key reordering."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def exterior_field(
    model: ModelInstance,
    active: Sequence[Site] | None = None,
) -> np.ndarray:
    """h_x = sum_{y notin active} J_xy omega_y for every active site x."""
    sites = model.volume.sites if active is None else tuple(active)
    J = model.couplings
    bc = model.boundary
    h = np.zeros(len(sites))
    if bc.kind == "free":
        return h
    inside = set(sites)
    for i, x in enumerate(sites):
        if bc.value != 0.0:
            interior_sum = sum(J.J(x, y) for y in sites if y != x)
            h[i] = bc.value * (J.signed_sum(x) - interior_sum)
        for y, w in bc.values.items():
            if y not in inside and y != x:
                h[i] += J.J(x, y) * (w - bc.value)
    return h


def effective_beta(model: ModelInstance, r0: int | None = None) -> float:
    """beta * sup_{x on r0 Z^d} sum_{y on r0 Z^d} |J_xy|."""
    if r0 is None:
        r0 = model.volume.r0
    if r0 <= 0:
        raise ValueError("r0 must be a positive integer")
    J = model.couplings
    if J.translation_invariant:
        return model.beta * J.sublattice_abs_sum((0,) * J.dimension, r0)
    sites = set()
    for p in J.pairs:
        sites.update(p)
    sites = [x for x in sites if all(c % r0 == 0 for c in x)]
    return model.beta * max((J.sublattice_abs_sum(x, r0) for x in sites), default=0.0)


def theta(model: ModelInstance) -> float:
    """vartheta(omega) = sup_{Lambda, x in Lambda} sum_{y notin Lambda} |J_xy omega_y|.

    Every term is nonnegative, so the sup is attained at Lambda = {x}.
    """
    bc = model.boundary
    if bc.kind == "free":
        return 0.0
    J = model.couplings
    best = 0.0
    candidates = model.volume.sites if J.translation_invariant or not bc.values else model.volume.sites
    for x in candidates:
        total = abs(bc.value) * J.abs_sum_bracket(x)[1]
        for y, w in bc.values.items():
            if y != x:
                total += abs(J.J(x, y)) * (abs(w) - abs(bc.value))
        best = max(best, total)
    if not np.isfinite(best):
        raise TemperednessError("boundary condition is not strongly tempered (infinite influx)")
    return float(best)


def theta_bounded(model: ModelInstance) -> float:
    """omega-uniform bound R * sup_x sum_y |J_xy| for bounded spins."""
    R = model.site_measure.spin_bound
    if not np.isfinite(R):
        raise ValueError("theta_bounded needs bounded spins")
    J = model.couplings
    sites = model.volume.sites
    return R * max(J.abs_sum_bracket(x)[1] for x in sites)


def _as_config(model: ModelInstance, config, sites) -> np.ndarray:
    if isinstance(config, Mapping):
        try:
            sigma = np.array([float(config[x]) for x in sites])
        except KeyError as exc:
            raise DomainError(f"configuration misses site {exc.args[0]}") from None
    else:
        sigma = np.asarray(config, dtype=float)
        if sigma.shape != (len(sites),):
            raise DomainError(f"configuration must assign {len(sites)} spins")
    for v in sigma:
        if not model.site_measure.contains(v):
            raise DomainError(f"spin value {v} lies outside the single-site support")
    return sigma


def hamiltonian(model: ModelInstance, config) -> float:
    """H^omega_V(sigma) with the unordered-pair convention."""
    sites = model.volume.sites
    sigma = _as_config(model, config, sites)
    M = model.couplings.matrix(sites)
    pair = 0.5 * float(sigma @ M @ sigma)
    h = exterior_field(model)
    return -pair - float(sigma @ h)


def hamiltonian_free(model: ModelInstance, config) -> float:
    """Free-boundary Hamiltonian by an explicit loop over unordered pairs."""
    sites = model.volume.sites
    sigma = _as_config(model, config, sites)
    total = 0.0
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            total -= model.couplings.J(sites[i], sites[j]) * sigma[i] * sigma[j]
    return total


@dataclass
class SuperstabilityReport:
    min_slack: float
    witness: np.ndarray | None
    trials: int
    violated: bool


def check_superstability(model: ModelInstance, trials: int = 1000, seed: int = 0) -> SuperstabilityReport:
    """Randomized falsifier for sum F(s_x) + beta H(s) >= sum (A s_x^2 - c).

    Uses the free-boundary Hamiltonian. A negative slack is reported with its
    witness; a nonnegative slack proves nothing.
    """
    m = model.site_measure
    sites = model.volume.sites
    n = len(sites)
    M = model.couplings.matrix(sites)
    rng = np.random.default_rng(seed)
    if m.is_discrete:
        configs = rng.choice(m.nodes, size=(trials, n))
        extremes = [np.full(n, p) for p in m.nodes]
    else:
        span = m.R if m.bounded else m.L
        configs = rng.uniform(-span, span, size=(trials, n))
        extremes = [np.full(n, v) for v in (-span, -span / 2, 0.0, span / 2, span)]
        alt = np.array([span * (-1) ** i for i in range(n)], dtype=float)
        extremes.append(alt)
    configs = np.vstack([configs] + [e[None, :] for e in extremes])
    F = m.F(configs)
    pair = 0.5 * np.einsum("bi,ij,bj->b", configs, M, configs)
    slack = F.sum(axis=1) - model.beta * pair - (m.A * configs**2 - m.c).sum(axis=1)
    i = int(np.argmin(slack))
    worst = float(slack[i])
    return SuperstabilityReport(
        min_slack=worst,
        witness=configs[i].copy() if worst < 0 else None,
        trials=len(configs),
        violated=worst < 0,
    )


def quadratic_form_check(model: ModelInstance, quadratic_coefficient: float) -> tuple[float, bool]:
    """Sufficient check for F = a s^2 + (terms bounded below): lambda_min(a I - beta J / 2) >= A."""
    M = model.couplings.matrix(model.volume.sites)
    Q = quadratic_coefficient * np.eye(len(M)) - 0.5 * model.beta * M
    lam = float(np.linalg.eigvalsh(Q)[0])
    return lam, lam >= model.site_measure.A


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------


def _require(block: Mapping, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing key '{where}.{key}'" if where else f"missing key '{key}'")
    return block[key]


def coupling_from_config(block: Mapping, d: int) -> CouplingField:
    kind = _require(block, "kind", "coupling")
    try:
        if kind in ("zero", "none"):
            return CouplingField.zero(d)
        if kind == "nearest_neighbor":
            return CouplingField.nearest_neighbor(float(block.get("J", 1.0)), d)
        if kind == "finite_range":
            rows = _require(block, "table", "coupling")
            return CouplingField.finite_range({tuple(r[:-1]): float(r[-1]) for r in rows}, d)
        if kind == "power_law":
            return CouplingField.power_law(
                float(block.get("J0", 1.0)), float(_require(block, "s", "coupling")), d, block.get("horizon")
            )
        if kind == "custom":
            rows = _require(block, "pairs", "coupling")
            pairs = {frozenset((tuple(r[:d]), tuple(r[d : 2 * d]))): float(r[2 * d]) for r in rows}
            return CouplingField.custom(pairs, d)
    except (TypeError, IndexError) as exc:
        raise ConfigError(f"malformed coupling block: {exc}") from None
    raise ConfigError(f"unknown value '{kind}' for key 'coupling.kind'")


def measure_from_config(block: Mapping, quad: Mapping | None = None) -> SingleSiteMeasure:
    kind = _require(block, "kind", "measure")
    quad = quad or {}
    nodes = int(quad.get("nodes", DEFAULT_NODES))
    L = quad.get("L")
    A, c = block.get("A"), block.get("c")
    try:
        if kind == "gaussian":
            return SingleSiteMeasure.gaussian(float(block.get("variance", 1.0)), A=A, nodes=nodes, L=L)
        if kind == "polynomial":
            coeffs = block.get("F", block.get("coefficients"))
            if coeffs is None:
                raise ConfigError("missing key 'measure.F'")
            return SingleSiteMeasure.polynomial(coeffs, A=A, c=c, nodes=nodes, L=L,
                                                fprime_growth=block.get("fprime_growth"))
        if kind == "uniform":
            return SingleSiteMeasure.uniform(float(block.get("R", 1.0)), nodes=nodes)
        if kind == "bounded_polynomial":
            return SingleSiteMeasure.bounded_polynomial(
                float(block.get("R", 1.0)), block.get("F", block.get("coefficients", [0.0])), A=A, c=c, nodes=nodes
            )
        if kind == "ising":
            return SingleSiteMeasure.ising()
        if kind == "discrete":
            return SingleSiteMeasure.discrete(_require(block, "points", "measure"), block.get("F"), A=A, c=c)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid measure block: {exc}") from None
    raise ConfigError(f"unknown value '{kind}' for key 'measure.kind'")


def boundary_from_config(block: Mapping | None, d: int) -> BoundaryCondition:
    if not block:
        return BoundaryCondition.free()
    kind = _require(block, "kind", "boundary")
    if kind == "free":
        return BoundaryCondition.free()
    if kind == "constant":
        return BoundaryCondition.constant(float(_require(block, "value", "boundary")))
    if kind == "custom":
        rows = block.get("values", [])
        try:
            values = {tuple(int(v) for v in r[:d]): float(r[d]) for r in rows}
        except (TypeError, IndexError, ValueError) as exc:
            raise ConfigError(f"malformed boundary.values: {exc}") from None
        return BoundaryCondition.custom(values, float(block.get("default", 0.0)))
    raise ConfigError(f"unknown value '{kind}' for key 'boundary.kind'")


def model_from_config(cfg: Mapping) -> ModelInstance:
    """Build a model from the JSON config layout.

    Keys: ``dimension``, ``k`` (or explicit ``sites`` / ``chain_length``),
    ``r0``, ``coupling``, ``measure``, ``boundary``, ``beta``, ``quadrature``,
    optional ``site_cap``.
    """
    if not isinstance(cfg, Mapping):
        raise ConfigError("model config must be a JSON object")
    d = int(_require(cfg, "dimension", ""))
    r0 = int(cfg.get("r0", 1))
    cap = int(cfg.get("site_cap", DEFAULT_SITE_CAP))
    if "sites" in cfg:
        volume = volume_from_sites(cfg["sites"], r0=r0, site_cap=cap)
    elif "chain_length" in cfg:
        if d != 1:
            raise ConfigError("'chain_length' requires dimension 1")
        volume = volume_from_sites([(i,) for i in range(int(cfg["chain_length"]))], r0=r0, site_cap=cap)
    else:
        volume = build_volume(d, int(_require(cfg, "k", "")), r0, site_cap=cap)
    couplings = coupling_from_config(_require(cfg, "coupling", ""), d)
    measure = measure_from_config(_require(cfg, "measure", ""), cfg.get("quadrature"))
    boundary = boundary_from_config(cfg.get("boundary"), d)
    beta = float(_require(cfg, "beta", ""))
    try:
        return ModelInstance(volume, couplings, measure, boundary, beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
