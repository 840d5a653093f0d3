"""Certified constants: envelopes, band constants, Gruber-Kunz and tree-graph bounds, dilution scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal

from ._parallel import chunked

from .errors import (
    DegeneracyError,
    NoCertificateError,
    UnsupportedError,
    VacuousBoundError,
)
from .model import ModelInstance, Site, gauss_legendre_panels, effective_beta, exterior_field, theta, theta_bounded
from .polymer import Polymer, bond_sets_on, connected_vertex_sets

SLACK_FACTOR = 0.9
SCAN_POINTS = 1000
SCAN_SLACK = 1e-12
GK_SUPPORT_CAP = 6
R_MAX = 2**16
BETA_MIN = 1e-8


# ---------------------------------------------------------------------------
# Envelopes and moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvelopePair:
    """pi_- and pi_+ as pointwise densities on the quadrature nodes (not normalized)."""

    nodes: np.ndarray
    base_weights: np.ndarray
    minus: np.ndarray
    plus: np.ndarray
    theta: float
    beta_theta: float
    norm_minus: float
    norm_plus: float
    uniform: bool = False

    @property
    def minus_weights(self) -> np.ndarray:
        return self.base_weights * self.minus

    @property
    def plus_weights(self) -> np.ndarray:
        return self.base_weights * self.plus

    def minus_at(self, model: ModelInstance, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.exp(-model.site_measure.F(s) - self.beta_theta * np.abs(s)) / self.norm_minus

    def plus_at(self, model: ModelInstance, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.exp(-model.site_measure.F(s) + self.beta_theta * np.abs(s)) / self.norm_plus

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "beta_theta": self.beta_theta,
            "mass_minus": float(np.sum(self.minus_weights)),
            "mass_plus": float(np.sum(self.plus_weights)),
            "uniform": self.uniform,
        }


def envelopes(model: ModelInstance, uniform: bool = False) -> EnvelopePair:
    """pi_-(s) = e^{-F - b|s|} / int e^{-F + b|s|}, pi_+(s) = e^{-F + b|s|} / int e^{-F - b|s|}, b = beta * theta.

    With ``uniform`` the boundary-independent bound R sup_x sum_y |J_xy| replaces theta (bounded spins only).
    """
    m = model.site_measure
    th = theta_bounded(model) if uniform else theta(model)
    b = model.beta * th
    x = np.asarray(m.nodes, dtype=float)
    F = m.F(x)
    up = np.exp(-F + b * np.abs(x))
    down = np.exp(-F - b * np.abs(x))
    z_up = float(np.sum(m.weights * up))
    z_down = float(np.sum(m.weights * down))
    if not (np.isfinite(z_up) and z_down > 1e-300):
        from .errors import ScalingError

        raise ScalingError("envelope normalization under/overflowed; shift F by a constant")
    return EnvelopePair(
        nodes=x, base_weights=np.asarray(m.weights, dtype=float),
        minus=down / z_up, plus=up / z_down, theta=th, beta_theta=b,
        norm_minus=z_up, norm_plus=z_down, uniform=uniform,
    )


def pm_moments(env: EnvelopePair, ell: int) -> tuple[float, float]:
    """(M_ell^-, M_ell^+): absolute moments against pi_- and pi_+."""
    if ell < 0 or ell > 8:
        raise ValueError("moment order must be in 0..8")
    a = np.abs(env.nodes) ** ell
    return float(np.sum(a * env.minus_weights)), float(np.sum(a * env.plus_weights))


# ---------------------------------------------------------------------------
# Accurate single-site characteristic functions for the scans
# ---------------------------------------------------------------------------


def _site_fields(model: ModelInstance) -> list[float]:
    h = exterior_field(model)
    return sorted(set(np.round(h, 12).tolist())) or [0.0]


def site_cf_accurate(model: ModelInstance, s, h: float = 0.0) -> np.ndarray:
    """nu(e^{i s sigma}) for the tilt beta*h.

    Exact sums for discrete spins; otherwise composite 16-point Gauss-Legendre
    panels no wider than a sixth of the shortest wavelength in ``s``.
    """
    m = model.site_measure
    s = np.atleast_1d(np.asarray(s, dtype=float))
    bh = model.beta * h
    if m.is_discrete:
        x, w = m.nodes, np.ones(len(m.nodes))
    else:
        lo, hi = (-m.R, m.R) if m.bounded else (-m.L, m.L)
        width = min(0.25, (math.pi / 3.0) / max(1.0, float(np.max(np.abs(s)))))
        panels = int(math.ceil((hi - lo) / width))
        cuts = np.linspace(lo, hi, panels + 1)
        x, w = gauss_legendre_panels(lo, hi, 16 * (panels + len(m.kinks) + 1), [*cuts[1:-1], 0.0, *m.kinks])
    logp = -m.F(x) + bh * x
    p = w * np.exp(logp - np.max(logp))
    p = p / p.sum()
    out = np.empty(len(s), dtype=complex)
    for lo_i, hi_i in chunked(len(s), 256):
        out[lo_i:hi_i] = np.exp(1j * np.multiply.outer(s[lo_i:hi_i], x)) @ p
    return out


@dataclass
class ScanResult:
    name: str
    domain: tuple[float, float]
    points: int
    violations: int
    worst_slack: float
    witness: float | None

    def to_dict(self) -> dict:
        return {
            "name": self.name, "domain": list(self.domain), "points": self.points,
            "violations": self.violations, "worst_slack": self.worst_slack, "witness": self.witness,
        }


def _scan(name, model, s, bound_fn, slack=SCAN_SLACK) -> ScanResult:
    worst, witness, viol = math.inf, None, 0
    for h in _site_fields(model):
        val = np.abs(site_cf_accurate(model, s, h))
        gap = bound_fn(s) - val
        viol += int(np.sum(gap < -slack))
        i = int(np.argmin(gap))
        if gap[i] < worst:
            worst, witness = float(gap[i]), float(s[i])
    return ScanResult(name, (float(s[0]), float(s[-1])), len(s), viol, worst, witness if worst < -slack else None)


# ---------------------------------------------------------------------------
# Band constants
# ---------------------------------------------------------------------------


@dataclass
class SoftConstants:
    c1: float
    delta0: float
    variance_proxy: float
    moments_minus: tuple
    moments_plus: tuple
    slack_factor: float = SLACK_FACTOR

    def __iter__(self):
        return iter((self.c1, self.delta0))


def _soft_error(delta: float, Mp) -> float:
    """Upper bound on |(M2 - M1^2)(theta) - (M2 - M1^2)(0)| for |theta/sqrt D| <= delta."""
    ea = delta**2 * Mp[2] + delta * Mp[1]
    if ea >= 1.0:
        return math.inf
    ec = delta**2 * Mp[4] + delta * Mp[3]
    ee = delta**2 * Mp[3] + delta * Mp[2]
    r = (ee + Mp[1] * ea) / (1.0 - ea)
    return (ec + Mp[2] * ea) / (1.0 - ea) + r * (2.0 * Mp[1] + r)


def soft_constants(model: ModelInstance, uniform: bool = False, env: EnvelopePair | None = None) -> SoftConstants:
    """c1 = 0.9 * v/2 with v = M0^- M2^- - (M1^-)^2, and the largest delta0 in (0, 1] keeping
    the perturbation of the variance below (1 - 0.9) v."""
    env = env or envelopes(model, uniform)
    Mm = [pm_moments(env, k)[0] for k in range(5)]
    Mp = [pm_moments(env, k)[1] for k in range(5)]
    vp = Mm[0] * Mm[2] - Mm[1] ** 2
    if vp <= 1e-14:
        raise DegeneracyError(f"variance proxy {vp:.3g} is not positive; the measure is degenerate")
    c1 = SLACK_FACTOR * vp / 2.0
    budget = (1.0 - SLACK_FACTOR) * vp
    if _soft_error(1.0, Mp) <= budget:
        d0 = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _soft_error(mid, Mp) <= budget:
                lo = mid
            else:
                hi = mid
        d0 = lo
    if d0 <= 0.0:
        raise DegeneracyError("no positive delta0 satisfies the soft-band perturbation bound")
    return SoftConstants(c1, d0, vp, tuple(Mm), tuple(Mp))


def jt_mass(model: ModelInstance, T_big: float, env: EnvelopePair | None = None, grid: int = 8001) -> float:
    """pi_- x pi_- mass of {2/T <= |s - s'| <= pi/T}."""
    env = env or envelopes(model)
    m = model.site_measure
    u1, u2 = 2.0 / T_big, math.pi / T_big
    if m.is_discrete:
        d = np.abs(np.subtract.outer(env.nodes, env.nodes))
        mask = (d >= u1 - 1e-12) & (d <= u2 + 1e-12)
        w = env.minus_weights
        return float(np.sum(np.outer(w, w) * mask))
    lo, hi = (-m.R, m.R) if m.bounded else (-m.L, m.L)
    x = np.linspace(lo, hi, grid)
    dx = x[1] - x[0]
    p = env.minus_at(model, x)
    wts = np.full(grid, dx)
    wts[0] = wts[-1] = 0.5 * dx
    c = signal.fftconvolve(p * wts, (p * wts)[::-1], mode="full") / dx  # density of s - s'
    lags = (np.arange(len(c)) - (grid - 1)) * dx
    c = np.clip(c, 0.0, None)

    def band(a, b):
        inside = (lags > a) & (lags < b)
        xs = np.concatenate([[a], lags[inside], [b]])
        ys = np.interp(xs, lags, c)
        return float(integrate.trapezoid(ys, xs))

    return band(u1, u2) + band(-u2, -u1)


def medium_constant(model: ModelInstance, delta: float, T_big: float, env: EnvelopePair | None = None) -> float:
    """eta = -1/2 log(1 - 2 sin^2(delta/T) m(J_T))."""
    if not 0 < delta < T_big:
        raise ValueError("need 0 < delta < T")
    mass = jt_mass(model, T_big, env)
    if mass <= 1e-15:
        raise VacuousBoundError(f"J_T has zero mass at T={T_big}; the medium-band contraction is vacuous")
    return -0.5 * math.log1p(-2.0 * math.sin(delta / T_big) ** 2 * mass)


def hard_constant(model: ModelInstance, env: EnvelopePair | None = None) -> float:
    """gamma = int (|F'| + beta*theta) pi_+, plus the boundary values of pi_+ for spins on [-R, R]."""
    m = model.site_measure
    if m.is_discrete or m.dF is None:
        raise UnsupportedError("the hard band is absent for discrete spins")
    env = env or envelopes(model)
    g = float(np.sum((np.abs(m.dF(env.nodes)) + env.beta_theta) * env.plus_weights))
    if m.bounded:
        g += float(np.sum(env.plus_at(model, np.array([-m.R, m.R]))))
    return g


def soft_scan(model: ModelInstance, c1: float, delta0: float, points: int = SCAN_POINTS) -> ScanResult:
    s = np.linspace(0.0, delta0, points)
    return _scan("soft", model, s, lambda s: np.exp(-c1 * s**2))


def medium_scan(model: ModelInstance, eta: float, delta: float, T_big: float, points: int = SCAN_POINTS) -> ScanResult:
    s = np.linspace(delta, T_big, points)
    return _scan("medium", model, s, lambda s: np.full(len(s), math.exp(-eta)))


def hard_scan(model: ModelInstance, gamma: float, T_big: float, s_max: float = 100.0,
              points: int = SCAN_POINTS) -> ScanResult:
    s = np.linspace(T_big, s_max, points)
    return _scan("hard", model, s, lambda s: gamma / s)


@dataclass
class BandConstants:
    c1: float
    delta0: float
    eta: float | None
    gamma: float | None
    provenance: dict = field(default_factory=dict)


@dataclass
class BandReport:
    constants: BandConstants
    B: float
    delta: float
    T: float
    scans: list
    regions: object | None = None

    @property
    def violations(self) -> int:
        return sum(s.violations for s in self.scans)

    def to_dict(self) -> dict:
        c = self.constants
        out = {
            "c1": c.c1, "delta0": c.delta0, "eta": c.eta, "gamma": c.gamma,
            "B": self.B, "delta": self.delta, "T": self.T,
            "slack_factor": SLACK_FACTOR,
            "provenance": c.provenance,
            "scans": [s.to_dict() for s in self.scans],
            "violations": self.violations,
        }
        if self.regions is not None:
            out["regions"] = self.regions.to_dict()
        return out


def band_report(model: ModelInstance, delta: float, T_big: float, B: float | None = None,
                points: int = SCAN_POINTS, with_regions: bool = False) -> BandReport:
    env = envelopes(model)
    soft = soft_constants(model, env=env)
    scans = [soft_scan(model, soft.c1, soft.delta0, points)]
    prov = {"moments_minus": list(soft.moments_minus), "moments_plus": list(soft.moments_plus),
            "variance_proxy": soft.variance_proxy}
    eta = gamma = None
    try:
        prov["jt_mass"] = jt_mass(model, T_big, env)
        eta = medium_constant(model, delta, T_big, env)
        scans.append(medium_scan(model, eta, delta, T_big, points))
    except VacuousBoundError:
        prov["jt_mass"] = 0.0
    if not model.site_measure.is_discrete:
        gamma = hard_constant(model, env)
        m = model.site_measure
        prov["abs_fprime_integral"] = float(np.sum(np.abs(m.dF(env.nodes)) * env.plus_weights))
        scans.append(hard_scan(model, gamma, T_big, points=points))
    regions = None
    if with_regions and B is not None:
        from .gibbs import region_integrals

        regions = region_integrals(model, B, delta, T_big)
    return BandReport(BandConstants(soft.c1, soft.delta0, eta, gamma, prov), B or 0.0, delta, T_big, scans, regions)


def hard_band_tail(gamma: float, sqrt_D: float, n_sites: int, T_big: float) -> float:
    """Closed form of int_{T sqrt D}^inf (gamma sqrt D / t)^n dt (one side)."""
    if n_sites < 2:
        return math.inf
    return gamma * sqrt_D / (n_sites - 1) * (gamma / T_big) ** (n_sites - 1)


# ---------------------------------------------------------------------------
# Tree-graph bound and Gruber-Kunz
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceCertificate:
    kind: str
    a: float
    lhs: float
    partial: float
    remainder: float
    rhs: float
    margin: float
    passes: bool
    conclusive: bool
    r0: int
    beta: float
    beta_hat: float
    G: float
    G_displayed: float
    G_cayley: float
    dil1: bool
    dil2: bool
    dil3: bool
    bound: float | None
    support_cap: int = 0
    polymer_count: int = 0
    theta: float = 0.0
    theta_moments: tuple = ()
    notes: list = field(default_factory=list)

    @property
    def flags(self) -> dict:
        return {"dil1": self.dil1, "dil2": self.dil2, "dil3": self.dil3}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "a": self.a, "lhs": self.lhs, "partial": self.partial,
            "remainder": self.remainder, "rhs": self.rhs, "margin": self.margin,
            "passes": self.passes, "conclusive": self.conclusive, "r0": self.r0,
            "beta": self.beta, "beta_hat": self.beta_hat, "G": self.G,
            "G_displayed": self.G_displayed, "G_cayley": self.G_cayley,
            "dil1": self.dil1, "dil2": self.dil2, "dil3": self.dil3, "bound": self.bound,
            "support_cap": self.support_cap, "polymer_count": self.polymer_count,
            "theta": self.theta, "theta_moments": list(self.theta_moments), "notes": list(self.notes),
        }


def _uniform_envelopes(model: ModelInstance, r0: int) -> bool:
    """Bounded spins under dilution need the boundary-uniform envelopes (interior spins act as boundary)."""
    return model.site_measure.bounded and r0 > 1


def tree_bound(model: ModelInstance, a: float, r0: int | None = None, s_max: int = 8,
               uniform: bool | None = None) -> ConvergenceCertificate:
    """Tree-graph bound T <= sum_n bh^n (e^a G)^{n+1} <= 2 (e^a G)^2 bh with the three dilution conditions.

    G_displayed = int exp(|s| + A s^2/4) pi_+, G_cayley = int |s| exp(|s| + 2 bh s^2) pi_+
    (= sum_s Theta(s+1)/s!); G is the larger of the two.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    r0 = model.volume.r0 if r0 is None else int(r0)
    if uniform is None:
        uniform = _uniform_envelopes(model, r0)
    env = envelopes(model, uniform)
    bh = effective_beta(model, r0)
    A = model.site_measure.A
    x = np.abs(env.nodes)
    w = env.plus_weights
    dil1 = bh <= A / 4.0
    notes = []
    with np.errstate(over="ignore"):
        g_disp = float(np.sum(np.exp(x + 0.25 * A * x**2) * w))
        g_cay = float(np.sum(x * np.exp(x + 2.0 * bh * x**2) * w))
        thetas = tuple(float(np.sum(x**s * np.exp(2.0 * bh * x**2) * w)) for s in range(s_max + 1))
    G = max(g_disp, g_cay)
    if not np.isfinite(G):
        notes.append("G diverges on the quadrature window")
    ea = math.exp(a)
    q = bh * ea * G
    dil2 = q <= 0.5
    dil3 = bh <= math.expm1(a) / (2.0 * (ea * G) ** 2)
    ok = bool(dil1 and dil2 and dil3 and np.isfinite(G))
    value = 2.0 * (ea * G) ** 2 * bh
    bound = value if ok else None
    rhs = math.expm1(a)
    lhs = value if (dil1 and dil2 and np.isfinite(G)) else math.inf
    return ConvergenceCertificate(
        kind="tree", a=a, lhs=lhs, partial=0.0, remainder=lhs, rhs=rhs, margin=rhs - lhs,
        passes=ok, conclusive=bool(np.isfinite(lhs)), r0=r0, beta=model.beta, beta_hat=bh,
        G=G, G_displayed=g_disp, G_cayley=g_cay, dil1=dil1, dil2=dil2, dil3=dil3, bound=bound,
        theta=env.theta, theta_moments=thetas, notes=notes,
    )


def tree_series(bh: float, eaG: float, n_from: int = 1) -> float:
    """sum_{n >= n_from} bh^n (e^a G)^{n+1}."""
    q = bh * eaG
    if q >= 1.0:
        return math.inf
    return eaG * q**n_from / (1.0 - q)


def lattice_polymers_through(model: ModelInstance, x0: Site, r0: int, support_cap: int,
                             window: int | None = None) -> list[Polymer]:
    """Bond polymers on the sublattice r0 Z^d containing x0 with support <= support_cap."""
    J = model.couplings
    d = J.dimension
    x0 = tuple(x0)
    if J.kind == "custom":
        sites = set()
        for p in J.pairs:
            sites |= set(p)
        sites = [y for y in sites if all(c % r0 == 0 for c in y)] + [x0]
    else:
        rng = J.range
        if rng is None:
            rng = window if window is not None else 2 * r0
            reach = rng
        else:
            reach = (support_cap - 1) * rng
        if rng == 0:
            return []
        n = reach // r0
        sites = [tuple(x0[i] + r0 * (o[i] - n) for i in range(d)) for o in np.ndindex(*([2 * n + 1] * d))]
        sites = [y for y in sites if max(abs(y[i] - x0[i]) for i in range(d)) <= reach]
    out = []
    for S in connected_vertex_sets(sites, lambda u, v: J.J(u, v) != 0.0, support_cap, root=x0):
        out.extend(bond_sets_on(S, J.J))
    return sorted(out)


def polymer_abs_weight(model: ModelInstance, R: Polymer, env: EnvelopePair) -> float:
    from .expansion import gamma_abs

    return gamma_abs(model, R, weights={x: env.plus_weights for x in R.support})


def gruber_kunz(model: ModelInstance, a: float = 1.0, support_cap: int = GK_SUPPORT_CAP,
                r0: int | None = None, window: int | None = None) -> ConvergenceCertificate:
    """sup_x sum_{R through x} |G|(R) e^{a|supp R|} <= e^a - 1, with |G| taken against pi_+.

    Supports above the cap are covered by the tree-graph series: for
    finite-range couplings its terms with n >= cap, otherwise the whole series.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    r0 = model.volume.r0 if r0 is None else int(r0)
    tb = tree_bound(model, a, r0)
    env = envelopes(model, _uniform_envelopes(model, r0))
    J = model.couplings
    if J.translation_invariant:
        reps = [(0,) * J.dimension]
    else:
        reps = [x for x in model.volume.sites if all(c % r0 == 0 for c in x)]
    eaG = math.exp(a) * tb.G
    notes = list(tb.notes)
    if J.is_zero or tb.beta_hat == 0.0:
        remainder = 0.0
    elif not tb.dil1 or not np.isfinite(tb.G):
        remainder = math.inf
        notes.append("remainder unavailable: dilution condition 1 fails")
    elif J.range is not None:
        remainder = tree_series(tb.beta_hat, eaG, n_from=support_cap)
    else:
        remainder = tree_series(tb.beta_hat, eaG, n_from=1)
        notes.append("long-range remainder uses the full tree-graph series")
    partial, count = 0.0, 0
    if np.isfinite(remainder):
        for x0 in reps:
            polys = lattice_polymers_through(model, x0, r0, support_cap, window)
            count = max(count, len(polys))
            s = sum(polymer_abs_weight(model, R, env) * math.exp(a * len(R.support)) for R in polys)
            partial = max(partial, s)
    else:
        # inconclusive whatever the partial sum is; dense long-range supports are costly
        partial = math.inf
        notes.append("partial sum skipped")
    rhs = math.expm1(a)
    lhs = partial + remainder
    conclusive = np.isfinite(remainder)
    return ConvergenceCertificate(
        kind="gruber_kunz", a=a, lhs=lhs, partial=partial, remainder=remainder, rhs=rhs,
        margin=rhs - lhs, passes=bool(conclusive and lhs <= rhs), conclusive=bool(conclusive),
        r0=r0, beta=model.beta, beta_hat=tb.beta_hat, G=tb.G, G_displayed=tb.G_displayed,
        G_cayley=tb.G_cayley, dil1=tb.dil1, dil2=tb.dil2, dil3=tb.dil3, bound=tb.bound,
        support_cap=support_cap, polymer_count=count, theta=env.theta,
        theta_moments=tb.theta_moments, notes=notes,
    )


# ---------------------------------------------------------------------------
# Dilution and temperature selection
# ---------------------------------------------------------------------------


def _with_r0(model: ModelInstance, r0: int) -> ModelInstance:
    from dataclasses import replace

    return model.with_volume(replace(model.volume, r0=r0, diluted_sites=()))


def select_dilution(model: ModelInstance, epsilon: float, r_max: int = R_MAX) -> tuple[int, ConvergenceCertificate]:
    """Smallest r0 (doubling scan, then refined) whose tree-bound certificate gives |U2| <= epsilon per site."""
    if not model.site_measure.bounded:
        raise UnsupportedError("dilution selection applies to bounded spins; use select_beta")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = math.log1p(epsilon)

    def cert(r):
        return tree_bound(model, a, r, uniform=True)

    r, prev = 1, 0
    c = cert(1)
    while not c.passes:
        prev = r
        r *= 2
        if r > r_max:
            raise NoCertificateError(f"no dilution up to r0={r_max} certifies epsilon={epsilon}")
        c = cert(r)
    for cand in range(prev + 1, r):
        cc = cert(cand)
        if cc.passes:
            return cand, cc
    return r, c


def select_beta(model: ModelInstance, epsilon: float, beta_min: float = BETA_MIN) -> tuple[float, ConvergenceCertificate]:
    """Largest beta (bisection) whose tree-bound certificate gives |U2| <= epsilon per site."""
    if model.site_measure.bounded:
        raise UnsupportedError("temperature selection applies to unbounded spins; use select_dilution")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = math.log1p(epsilon)
    cs = effective_beta(model.with_beta(1.0), 1)
    hi = model.site_measure.A / (4.0 * cs) if cs > 0 else 1.0

    def cert(b):
        return tree_bound(model.with_beta(b), a, 1)

    if cs == 0.0:
        return model.beta, cert(model.beta)
    lo_c = cert(beta_min)
    if not lo_c.passes:
        raise NoCertificateError(f"no beta >= {beta_min} certifies epsilon={epsilon}")
    hi_c = cert(hi)
    if hi_c.passes:
        return hi, hi_c
    lo, best = beta_min, lo_c
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        cm = cert(mid)
        if cm.passes:
            lo, best = mid, cm
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return lo, best
