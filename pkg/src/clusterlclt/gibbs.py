"""Exact finite-volume Gibbs computations.

The engine sums exp(-beta H) over the full product quadrature (or the full
configuration space for discrete spins) by variable elimination on the
coupling graph: sites are integrated out one at a time in greedy min-degree
order, so chains and decoupled sites cost O(|V| N^2) instead of N^|V|.  Every
quantity is computed for a batch of "insertions" (phase factors e^{i t s} or
monomials s_x, s_x s_y) sharing one elimination pass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from ._parallel import chunked, pmap
from .errors import DegeneracyError, ScalingError, SizeError, UnsupportedError
from .model import (
    BoundaryCondition,
    ModelInstance,
    Site,
    exterior_field,
    volume_from_sites,
)

TENSOR_CAP = 2**22
BATCH_BUDGET = 2**23
MAX_CHUNK = 512
DENSITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _elimination_plan(n: int, edges: list[tuple[int, int]]) -> tuple[list[int], int]:
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    remaining = set(range(n))
    order, width = [], 0
    while remaining:
        v = min(remaining, key=lambda u: (len(adj[u]), u))
        nb = adj.pop(v)
        width = max(width, len(nb))
        for a in nb:
            adj[a] |= nb - {a}
            adj[a].discard(v)
        remaining.discard(v)
        order.append(v)
    return order, width


class GibbsEngine:
    """Variable-elimination integrator for one model (and optional restricted site set)."""

    def __init__(self, model: ModelInstance, tensor_cap: int = TENSOR_CAP):
        m = model.site_measure
        self.model = model
        self.sites: tuple[Site, ...] = model.volume.sites
        n = len(self.sites)
        self.nodes = np.asarray(m.nodes, dtype=float)
        N = len(self.nodes)
        diluted = set(model.volume.diluted_sites)
        self.phase_index = np.array([i for i, x in enumerate(self.sites) if x in diluted], dtype=int)

        with np.errstate(divide="ignore"):
            logw0 = np.log(m.weights) - m.F(self.nodes)
        h = exterior_field(model)
        self.log0 = 0.0
        self.w = []
        for i in range(n):
            lw = logw0 + model.beta * h[i] * self.nodes
            top = float(np.max(lw))
            if not np.isfinite(top):
                raise ScalingError("single-site weights vanish on every node; shift F by a constant")
            self.w.append(np.exp(lw - top))
            self.log0 += top

        Jm = model.couplings.matrix(self.sites)
        self.pairs: list[tuple[tuple[int, int], np.ndarray]] = []
        outer = np.multiply.outer(self.nodes, self.nodes)
        for i in range(n):
            for j in range(i + 1, n):
                if Jm[i, j] != 0.0:
                    e = model.beta * Jm[i, j] * outer
                    top = float(np.max(e))
                    self.pairs.append(((i, j), np.exp(e - top)))
                    self.log0 += top
        self.order, width = _elimination_plan(n, [p for p, _ in self.pairs])
        self.width = width
        if N**width > tensor_cap:
            raise SizeError(
                f"elimination needs a tensor with {N}^{width} entries, exceeding the tensor cap of {tensor_cap}"
            )
        self.chunk = int(max(1, min(MAX_CHUNK, BATCH_BUDGET // max(1, N ** max(width, 1)))))

    @property
    def n(self) -> int:
        return len(self.sites)

    def _contract(self, ins: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Return (mantissa, log_scale) with Z_b = mantissa_b * exp(log_scale_b + log0)."""
        B = 1 if ins is None else ins.shape[0]
        factors: list[tuple[tuple[int, ...], np.ndarray, bool]] = []
        for x in range(self.n):
            if ins is None:
                factors.append(((x,), self.w[x], False))
            else:
                factors.append(((x,), ins[:, x, :] * self.w[x], True))
        for (i, j), P in self.pairs:
            factors.append(((i, j), P, False))
        logs = np.zeros(B)
        for v in self.order:
            involved = [f for f in factors if v in f[0]]
            factors = [f for f in factors if v not in f[0]]
            out_vars = sorted(set().union(*(f[0] for f in involved)) - {v})
            batched = any(f[2] for f in involved)
            label = {u: k + 1 for k, u in enumerate(sorted(set(out_vars) | {v}))}
            args = []
            for vars_, arr, b in involved:
                args += [arr, ([0] if b else []) + [label[u] for u in vars_]]
            out = ([0] if batched else []) + [label[u] for u in out_vars]
            res = np.einsum(*args, out, optimize="greedy") if len(involved) > 1 else np.einsum(*args, out)
            if batched:
                s = np.max(np.abs(res.reshape(B, -1)), axis=1)
                s[s == 0.0] = 1.0
                res = res / s.reshape((B,) + (1,) * len(out_vars))
                logs += np.log(s)
            else:
                s = float(np.max(np.abs(res))) if res.size else 1.0
                if s == 0.0:
                    s = 1.0
                res = res / s
                logs += math.log(s)
            factors.append((tuple(out_vars), res, batched))
        val = np.ones(B, dtype=complex if ins is not None and np.iscomplexobj(ins) else float)
        for _, arr, _b in factors:
            val = val * arr
        return val, logs

    def contract(self, ins: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        if ins is None:
            return self._contract(None)
        spans = chunked(ins.shape[0], self.chunk)
        parts = pmap(lambda s: self._contract(ins[s[0] : s[1]]), spans)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def log_z(self) -> float:
        mant, logs = self._contract(None)
        if mant[0] <= 0:
            raise ScalingError("partition function underflowed; shift F by a constant")
        return float(math.log(mant[0]) + logs[0] + self.log0)

    def phase_insertions(self, t: np.ndarray, scale: float) -> np.ndarray:
        ins = np.ones((len(t), self.n, len(self.nodes)), dtype=complex)
        phase = np.exp(1j * np.multiply.outer(np.asarray(t, dtype=float) / scale, self.nodes))
        for x in self.phase_index:
            ins[:, x, :] = phase
        return ins

    def ratio(self, t: np.ndarray, scale: float) -> np.ndarray:
        """Z(t)/Z(0) with phase exp(i t sum_{diluted} s_x / scale)."""
        t = np.asarray(t, dtype=float)
        if t.size == 0:
            return np.zeros(0, dtype=complex)
        m0, l0 = self._contract(None)
        spans = chunked(len(t), self.chunk)

        def job(span):
            mant, logs = self._contract(self.phase_insertions(t[span[0] : span[1]], scale))
            return mant / m0[0] * np.exp(logs - l0[0])

        return np.concatenate(pmap(job, spans))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockStatistics:
    mean_S: float
    variance_D: float
    site_count: int
    site_means: tuple[float, ...] = ()

    @property
    def sqrt_D(self) -> float:
        return math.sqrt(self.variance_D)

    def to_dict(self) -> dict:
        return {"mean_S": self.mean_S, "variance_D": self.variance_D, "site_count": self.site_count}


@dataclass(frozen=True)
class CharacteristicTrace:
    t_grid: np.ndarray
    values: np.ndarray
    digest: str
    statistics: BlockStatistics


@dataclass(frozen=True)
class DensityReport:
    x_grid: np.ndarray
    p_values: np.ndarray
    gauss: np.ndarray
    sup_error: float
    integral: float
    tail_magnitude: float
    truncation_warning: bool
    t_max: float
    t_step: float

    def to_dict(self) -> dict:
        return {
            "sup_error": self.sup_error,
            "integral": self.integral,
            "tail_magnitude": self.tail_magnitude,
            "truncation_warning": self.truncation_warning,
            "t_max": self.t_max,
            "t_step": self.t_step,
        }


@dataclass(frozen=True)
class RegionIntegrals:
    B: float
    delta: float
    T: float
    sqrt_D: float
    low: float
    soft: float
    medium: float
    hard: float
    hard_tail: float
    tail_certified: bool
    gaussian_tail: float
    flags: tuple[str, ...] = ()
    edges: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.low + self.soft + self.medium + self.hard

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "delta": self.delta,
            "T": self.T,
            "sqrt_D": self.sqrt_D,
            "low": self.low,
            "soft": self.soft,
            "medium": self.medium,
            "hard": self.hard,
            "hard_tail": self.hard_tail,
            "tail_certified": self.tail_certified,
            "gaussian_tail": self.gaussian_tail,
            "total": self.total,
            "flags": list(self.flags),
            "edges": dict(self.edges),
        }


@dataclass
class MarkovReport:
    r0: int
    t_grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    witnesses: list
    worst_slack: float
    violations: int
    exact_sup: bool

    def to_dict(self) -> dict:
        return {
            "r0": self.r0,
            "worst_slack": self.worst_slack,
            "violations": self.violations,
            "exact_sup": self.exact_sup,
            "points": int(len(self.t_grid)),
        }


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def partition_function(model: ModelInstance, t: float = 0.0, variance: float | None = None) -> complex:
    """Z(t) = integral of exp(-beta H + i t S / sqrt(D)) over the product measure."""
    eng = GibbsEngine(model)
    if t == 0.0:
        return complex(math.exp(eng.log_z()), 0.0)
    if variance is None:
        raise ValueError("Z(t) at t != 0 needs the variance D; call moments() first or pass t=0")
    return complex(np.exp(log_partition_function(model, t, variance, engine=eng)))


def log_partition_function(model: ModelInstance, t: float, variance: float, engine: GibbsEngine | None = None) -> complex:
    """log Z(t) (principal branch of the mantissa plus the accumulated log scale)."""
    eng = engine or GibbsEngine(model)
    mant, logs = eng._contract(eng.phase_insertions(np.array([t]), math.sqrt(variance)))
    return complex(np.log(complex(mant[0])) + logs[0] + eng.log0)


def moments(model: ModelInstance) -> BlockStatistics:
    """Mean and variance of S = sum of the diluted spins under the finite-volume Gibbs measure."""
    eng = GibbsEngine(model)
    idx = list(eng.phase_index)
    n_d = len(idx)
    items = [()] + [(x,) for x in idx] + [(x, y) for a, x in enumerate(idx) for y in idx[a:]]
    ins = np.ones((len(items), eng.n, len(eng.nodes)))
    for b, item in enumerate(items):
        for x in item:
            ins[b, x, :] = ins[b, x, :] * eng.nodes
    mant, logs = eng.contract(ins)
    ev = mant / mant[0] * np.exp(logs - logs[0])
    means = ev[1 : 1 + n_d]
    second = {}
    k = 1 + n_d
    for a, x in enumerate(idx):
        for y in idx[a:]:
            second[(x, y)] = ev[k]
            k += 1
    mean_S = float(np.sum(means))
    ES2 = sum(v if x == y else 2.0 * v for (x, y), v in second.items())
    var = float(ES2 - mean_S**2)
    if var <= 1e-14 * max(1, n_d):
        raise DegeneracyError(f"variance of S is {var:.3g}; the block sum is degenerate")
    return BlockStatistics(mean_S=mean_S, variance_D=var, site_count=n_d, site_means=tuple(float(v) for v in means))


def char_fn(model: ModelInstance, t_grid, stats: BlockStatistics | None = None) -> CharacteristicTrace:
    """mu(exp(i t (S - mean)/sqrt(D))) on the grid; exact symmetry and value 1 at t = 0 are enforced."""
    stats = stats or moments(model)
    t = np.asarray(t_grid, dtype=float)
    ta, inv = np.unique(np.abs(t), return_inverse=True)
    eng = GibbsEngine(model)
    r = eng.ratio(ta, stats.sqrt_D) * np.exp(-1j * ta * stats.mean_S / stats.sqrt_D)
    r[ta == 0.0] = 1.0
    vals = r[inv.reshape(t.shape)]
    vals = np.where(t < 0, np.conj(vals), vals)
    return CharacteristicTrace(t_grid=t, values=vals, digest=model.digest(), statistics=stats)


def _gauss(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2.0 * math.pi)


def density(model: ModelInstance, x_grid, t_max: float = 40.0, t_step: float = 0.01,
            stats: BlockStatistics | None = None) -> DensityReport:
    """Density of the standardized sum by trapezoidal Fourier inversion on [-t_max, t_max].

    Uses p(x) = (1/2pi) int cf(t) e^{-itx} dt, folded onto t >= 0 with the
    conjugate symmetry of the trace.
    """
    if model.site_measure.is_discrete:
        raise UnsupportedError("discrete spins have no density against length measure")
    if t_max <= 0 or t_step <= 0:
        raise ValueError("t_max and t_step must be positive")
    n_steps = int(round(t_max / t_step))
    t = np.linspace(0.0, n_steps * t_step, n_steps + 1)
    tr = char_fn(model, t, stats)
    w = np.full(len(t), t_step)
    w[0] = w[-1] = 0.5 * t_step
    x = np.asarray(x_grid, dtype=float)
    # p(x) = (1/pi) int_0^tmax Re(cf(t) e^{-itx}) dt
    kern = np.exp(-1j * np.multiply.outer(x, t))
    p = (kern @ (w * tr.values)).real / math.pi
    g = _gauss(x)
    tail = float(np.max(np.abs(tr.values[-max(1, len(t) // 100):])))
    integral = float(trapezoid(p, x)) if len(x) > 1 else float("nan")
    return DensityReport(
        x_grid=x, p_values=p, gauss=g,
        sup_error=float(np.max(np.abs(p - g))) if len(x) else 0.0,
        integral=integral, tail_magnitude=tail,
        truncation_warning=tail > DENSITY_TOL, t_max=float(t[-1]), t_step=float(t_step),
    )


def lclt_error_curve(model: ModelInstance, ks, x_grid, t_max: float = 40.0, t_step: float = 0.01):
    """sup-norm LCLT error for the same model data on cubes of radius k."""
    from .model import build_volume

    if model.site_measure.is_discrete:
        raise UnsupportedError("the LCLT against length measure does not apply to discrete spins")
    out = []
    for k in ks:
        vol = build_volume(model.volume.dimension, int(k), model.volume.r0)
        rep = density(model.with_volume(vol), x_grid, t_max, t_step)
        out.append((int(k), rep.sup_error))
    return out


def _gl_panels(a: float, b: float, width: float = 0.25, order: int = 8):
    if b <= a:
        return np.zeros(0), np.zeros(0)
    m = max(1, int(math.ceil((b - a) / width)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, m + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def region_integrals(model: ModelInstance, B: float, delta: float, T_big: float,
                     stats: BlockStatistics | None = None, tol: float = 1e-12,
                     horizon: float = 400.0) -> RegionIntegrals:
    """Integrals of |cf - gaussian| on [-B, B] and of |cf| over the soft, medium and hard bands."""
    stats = stats or moments(model)
    sD = stats.sqrt_D
    n = stats.site_count
    flags = []
    e_soft = max(B, delta * sD)
    e_med = max(B, T_big * sD)
    if delta * sD <= B:
        flags.append("soft_empty")
    if T_big * sD <= max(B, delta * sD):
        flags.append("medium_empty")

    hard_absent = model.site_measure.is_discrete
    certified = False
    t_cut = e_med
    tail = 0.0
    if hard_absent:
        flags.append("hard_absent")
    else:
        from .bounds import hard_constant

        gam = hard_constant(model)
        g = gam * sD
        certified = model.couplings.is_zero and n >= 2
        if n >= 2:
            want = g * tol ** (-1.0 / n)
            t_cut = max(e_med, min(want, e_med + horizon))
            tail = g / (n - 1) * (g / t_cut) ** (n - 1)
        else:
            t_cut = e_med + horizon
            flags.append("hard_tail_not_integrable")
            tail = float("inf")
        if not certified:
            flags.append("hard_tail_uncertified")

    pieces = [(0.0, B), (B, e_soft), (e_soft, e_med), (e_med, t_cut)]
    grids = [_gl_panels(a, b) for a, b in pieces]
    allt = np.concatenate([g[0] for g in grids])
    vals = char_fn(model, allt, stats).values if allt.size else np.zeros(0, dtype=complex)
    out = []
    k = 0
    for i, (x, w) in enumerate(grids):
        v = vals[k : k + len(x)]
        k += len(x)
        integrand = np.abs(v - np.exp(-0.5 * x**2)) if i == 0 else np.abs(v)
        out.append(2.0 * float(np.sum(w * integrand)))
    hard = out[3] + (2.0 * tail if np.isfinite(tail) else 0.0)
    return RegionIntegrals(
        B=B, delta=delta, T=T_big, sqrt_D=sD,
        low=out[0], soft=out[1], medium=out[2], hard=hard,
        hard_tail=2.0 * tail, tail_certified=certified,
        gaussian_tail=math.sqrt(2.0 * math.pi) * math.erfc(B / math.sqrt(2.0)),
        flags=tuple(flags),
        edges={"B": B, "soft_end": e_soft, "medium_end": e_med, "t_cut": t_cut},
    )


def restricted_model(model: ModelInstance, interior: dict) -> ModelInstance:
    """Model on the diluted sites only, with the interior spins frozen into the boundary."""
    vol = model.volume
    sub = volume_from_sites(vol.diluted_sites, r0=1, site_cap=max(64, len(vol.sites)))
    bc: BoundaryCondition = model.boundary.merged(interior)
    return ModelInstance(sub, model.couplings, model.site_measure, bc, model.beta)


def markov_dilution_check(model: ModelInstance, r0: int, t_grid, boundary_grid=None,
                          tol: float = 1e-12) -> MarkovReport:
    """Compare |cf| of the diluted block sum with the sup over frozen interior spins."""
    import itertools

    from dataclasses import replace

    vol = replace(model.volume, r0=int(r0), diluted_sites=())
    full = model.with_volume(vol)
    stats = moments(full)
    t = np.asarray(t_grid, dtype=float)
    lhs = np.abs(char_fn(full, t, stats).values)
    interior_sites = vol.interior_sites
    m = model.site_measure
    if boundary_grid is None:
        if m.is_discrete:
            boundary_grid = m.nodes.tolist()
        else:
            span = m.R if m.bounded else 3.0 / math.sqrt(m.A)
            boundary_grid = np.linspace(-span, span, 5).tolist()
    exact = m.is_discrete and set(np.round(boundary_grid, 12)) >= set(np.round(m.nodes, 12))
    rhs = np.full(len(t), -np.inf)
    witnesses = [None] * len(t)
    for assignment in itertools.product(boundary_grid, repeat=len(interior_sites)):
        interior = dict(zip(interior_sites, assignment))
        sub = restricted_model(full, interior)
        vals = np.abs(GibbsEngine(sub).ratio(np.abs(t), stats.sqrt_D))
        better = vals > rhs
        rhs = np.where(better, vals, rhs)
        for i in np.nonzero(better)[0]:
            witnesses[i] = tuple(float(v) for v in assignment)
    slack = rhs - lhs
    viol = int(np.sum(slack < -tol))
    if viol:
        warnings.warn(f"Markov bound violated at {viol} grid points", RuntimeWarning, stacklevel=2)
    return MarkovReport(
        r0=int(r0), t_grid=t, lhs=lhs, rhs=rhs, witnesses=witnesses,
        worst_slack=float(np.min(slack)) if len(t) else 0.0, violations=viol, exact_sup=bool(exact),
    )
