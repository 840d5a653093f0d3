"""Polymer activities and the truncated cluster series for the characteristic function.

On the diluted block the Gibbs weight factorizes into tilted single-site
measures nu_x and Mayer factors f_xy = exp(beta J_xy s_x s_y) - 1.  Writing
phi_x(t) = nu_x(exp(i t s_x / sqrt(D))),

    Z(t) / Z(0) = prod_x phi_x(t) * Xi(t) / Xi(0),

where Xi is a gas of bond polymers R with activities

    G(R)(t) = int prod_{bonds} f  prod_{x in supp R} e^{i t s_x/sqrt(D)} nu_x(ds_x) / prod_{x in supp R} phi_x(t).

The numerator is the singleton-summed weight; dividing by phi makes the
identity exact (the activities are taken against the tilted probability
measures e^{i t s/sqrt(D)} nu_x / phi_x).  U1 = sum_x log phi_x and
Delta U = log Xi(t) - log Xi(0), expanded in clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchError, ScalingError, SizeError
from .gibbs import BlockStatistics, CharacteristicTrace, char_fn, moments, restricted_model
from .model import ModelInstance, Site, exterior_field
from .polymer import Cluster, Polymer, UrsellTable, cluster_enumeration, enumerate_polymers

ACTIVITY_SITE_CAP = 6
ACTIVITY_TENSOR_CAP = 2**16
BRANCH_TOL = 1e-6
IDENTITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# Single-site measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TiltedSiteMeasure:
    """nu_x on the quadrature nodes.

    ``density`` is e^{-F^w}/norm pointwise, ``weights`` the normalized
    quadrature weights (they sum to 1).
    """

    site: Site
    nodes: np.ndarray
    density: np.ndarray
    weights: np.ndarray
    normalization: float
    field: float

    def expect(self, values: np.ndarray) -> complex:
        return np.sum(self.weights * values)

    def cf(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.exp(1j * np.multiply.outer(s, self.nodes)) @ self.weights


def expansion_model(model: ModelInstance) -> ModelInstance:
    """The model seen by the expansion: the diluted block with the remaining sites frozen at 0."""
    vol = model.volume
    if vol.r0 == 1 or len(vol.diluted_sites) == len(vol.sites):
        return model
    return restricted_model(model, {x: 0.0 for x in vol.interior_sites})


def tilted_measure(model: ModelInstance, x: Site) -> TiltedSiteMeasure:
    """nu_x proportional to exp(-F(s) + beta s h_x) with h_x the exterior field at x."""
    x = tuple(x)
    sites = model.volume.sites
    if x not in sites:
        raise ValueError(f"site {x} is not in the volume")
    h = float(exterior_field(model)[sites.index(x)])
    m = model.site_measure
    with np.errstate(over="ignore"):
        dens = np.exp(-m.F(m.nodes) + model.beta * h * m.nodes)
    norm = float(np.sum(m.weights * dens))
    if not np.isfinite(norm):
        raise ScalingError("tilted normalization overflowed; shift F by a constant")
    if norm <= 1e-300:
        raise ScalingError("tilted normalization underflowed; shift F by a constant")
    return TiltedSiteMeasure(
        site=x, nodes=np.asarray(m.nodes, dtype=float), density=dens / norm,
        weights=m.weights * dens / norm, normalization=norm, field=h,
    )


def _site_measures(model: ModelInstance) -> dict[Site, TiltedSiteMeasure]:
    return {x: tilted_measure(model, x) for x in model.volume.sites}


def single_site_cf(model: ModelInstance, x: Site, s) -> np.ndarray:
    """nu_x(exp(i s sigma)) for an array of frequencies s."""
    return tilted_measure(model, x).cf(s)


# ---------------------------------------------------------------------------
# Polymer integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActivityValue:
    polymer: Polymer
    t: float
    value: complex
    absolute_majorant: float


def _check_support(polymer: Polymer, n_nodes: int):
    m = len(polymer.support)
    if m > ACTIVITY_SITE_CAP and n_nodes**m > ACTIVITY_TENSOR_CAP:
        raise SizeError(f"polymer support of {m} sites exceeds the tensor-quadrature cap of {ACTIVITY_SITE_CAP}")


def _integrate(polymer: Polymer, model: ModelInstance, site_vecs: dict, absolute: bool = False) -> np.ndarray:
    """Batched integral of prod_{bonds} f (or |f|) times prod_x site_vecs[x] (shape (B, N))."""
    sites = sorted(polymer.support)
    label = {x: k + 1 for k, x in enumerate(sites)}
    nodes = model.site_measure.nodes
    outer = np.multiply.outer(nodes, nodes)
    args = []
    for x in sites:
        args += [site_vecs[x], [0, label[x]]]
    for a, b in polymer.sorted_bonds():
        f = np.expm1(model.beta * model.couplings.J(a, b) * outer)
        args += [np.abs(f) if absolute else f, [label[a], label[b]]]
    return np.einsum(*args, [0], optimize="greedy")


def _phase_vecs(measures, sites, t, sqrt_D, singletons=frozenset(), insert=None):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = {}
    for x in sites:
        nu = measures[x]
        ph = np.exp(1j * np.multiply.outer(t / sqrt_D, nu.nodes))
        vec = (ph - 1.0) if x in singletons else ph
        if insert is not None:
            vec = vec * insert.get(x, 1.0)
        out[x] = vec * nu.weights
    return out


def activity(model: ModelInstance, R: Polymer, t: float, stats: BlockStatistics | None = None,
             measures: dict | None = None) -> ActivityValue:
    """zeta(R) at frequency t: singleton factors (e^{i t s/sqrt D} - 1), bond factors f_xy."""
    measures = measures or _site_measures(model)
    _check_support(R, len(model.site_measure.nodes))
    t = float(t)
    if t == 0.0 and R.singletons:
        val = 0j
    else:
        stats = stats or moments(model)
        vecs = {}
        for x in R.support:
            nu = measures[x]
            ph = np.exp(1j * t / stats.sqrt_D * nu.nodes)
            vecs[x] = ((ph - 1.0) if x in R.singletons else np.ones_like(ph)) * nu.weights
            vecs[x] = vecs[x][None, :]
        val = complex(_integrate(R, model, vecs)[0])
    maj = 2.0 ** len(R.singletons) * gamma_abs(model, R, measures)
    return ActivityValue(polymer=R, t=t, value=val, absolute_majorant=maj)


def gamma_abs(model: ModelInstance, R: Polymer, measures: dict | None = None, weights: dict | None = None) -> float:
    """|G|(R) = int prod |f| prod nu_x (or prod of the supplied nonnegative site weights)."""
    if not R.bonds:
        return 1.0
    measures = measures or (None if weights else _site_measures(model))
    vecs = {}
    for x in R.support:
        w = weights[x] if weights is not None else measures[x].weights
        vecs[x] = np.asarray(w, dtype=float)[None, :]
    return float(_integrate(R, model, vecs, absolute=True)[0])


def gamma_weight(model: ModelInstance, R: Polymer, t, stats: BlockStatistics, dressed: bool = True,
                 measures: dict | None = None) -> np.ndarray:
    """Singleton-summed weight of the bond polymer R at each t (divided by prod phi_x if dressed)."""
    measures = measures or _site_measures(model)
    _check_support(R, len(model.site_measure.nodes))
    sites = sorted(R.support)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = _integrate(R, model, _phase_vecs(measures, sites, t, stats.sqrt_D))
    if dressed:
        for x in sites:
            vals = vals / measures[x].cf(t / stats.sqrt_D)
    return vals


def gamma_weight_derivatives(model: ModelInstance, R: Polymer, t, stats: BlockStatistics | None = None,
                             measures: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """First and second t-derivatives of the (undressed) singleton-summed weight.

    G'(t) = (i/sqrt D) int prod f  s_R  e^{i t s_R/sqrt D} prod nu,
    G''(t) = -(1/D) int prod f  s_R^2 e^{i t s_R/sqrt D} prod nu, with s_R the sum over the support.
    """
    stats = stats or moments(model)
    measures = measures or _site_measures(model)
    _check_support(R, len(model.site_measure.nodes))
    sites = sorted(R.support)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    first = np.zeros(len(t), dtype=complex)
    second = np.zeros(len(t), dtype=complex)
    for a in sites:
        ins = {a: measures[a].nodes}
        first += _integrate(R, model, _phase_vecs(measures, sites, t, stats.sqrt_D, insert=ins))
        for b in sites:
            if a == b:
                ins2 = {a: measures[a].nodes**2}
            else:
                ins2 = {a: measures[a].nodes, b: measures[b].nodes}
            second += _integrate(R, model, _phase_vecs(measures, sites, t, stats.sqrt_D, insert=ins2))
    return 1j / stats.sqrt_D * first, -second / stats.variance_D


# ---------------------------------------------------------------------------
# Series
# ---------------------------------------------------------------------------


def u1(model: ModelInstance, t, stats: BlockStatistics | None = None, measures: dict | None = None) -> np.ndarray:
    """sum over diluted sites of the principal log of phi_x(t)."""
    em = expansion_model(model)
    stats = stats or moments(em)
    measures = measures or _site_measures(em)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    total = np.zeros(len(t), dtype=complex)
    prod = np.ones(len(t), dtype=complex)
    for x in em.volume.sites:
        phi = measures[x].cf(t / stats.sqrt_D)
        near = np.abs(phi) < BRANCH_TOL
        if np.any(near):
            raise BranchError(
                f"|1 + zeta({{{x}}})| = {float(np.min(np.abs(phi))):.3g} < {BRANCH_TOL} at t = {float(t[near][0]):.6g}"
            )
        total += np.log(phi)
        prod *= phi
    dev = np.max(np.abs(np.exp(total) - prod)) if len(t) else 0.0
    if dev > IDENTITY_TOL * max(1.0, float(np.max(np.abs(prod))) if len(t) else 1.0):
        raise ArithmeticError(f"exp(U1) departs from the product of single-site cfs by {dev:.3g}")
    return total


@dataclass
class ExpansionSeries:
    """Truncated cluster series on one t grid, bound to one set of block statistics."""

    t_grid: np.ndarray
    n_max: int
    support_cap: int
    statistics: BlockStatistics
    U1: np.ndarray
    U2: np.ndarray
    U2_zero: complex
    delta_U: np.ndarray
    order_terms: list  # Delta U contribution per order, arrays over t
    magnitudes: list  # t-independent majorant per order
    grid_magnitudes: list  # max over the grid of |order contribution to Delta U|
    tail_estimate: float
    polymer_count: int
    cluster_count: int
    gk_margin: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_max": self.n_max,
            "support_cap": self.support_cap,
            "magnitudes": list(self.magnitudes),
            "grid_magnitudes": list(self.grid_magnitudes),
            "tail_estimate": self.tail_estimate,
            "polymer_count": self.polymer_count,
            "cluster_count": self.cluster_count,
            "gk_margin": self.gk_margin,
            "flags": list(self.flags),
            "statistics": self.statistics.to_dict(),
        }


def _ratio(mags: list) -> float:
    if len(mags) < 2 or mags[-2] == 0.0:
        return 1.0
    return mags[-1] / mags[-2]


def _tail(mags: list, last_term: np.ndarray | None = None, cf_abs: np.ndarray | None = None) -> float:
    """Next-order estimate: last majorant times the ratio of the last two.

    With the last order's grid values and |exp(U1 + Delta U)| supplied, the
    same geometric factor is also applied in cf units and the larger of the
    two estimates is returned.
    """
    if not mags:
        return 0.0
    est = mags[-1] * _ratio(mags)
    if last_term is not None and cf_abs is not None and len(last_term):
        with np.errstate(over="ignore", invalid="ignore"):
            w = cf_abs * np.abs(last_term)
        est = max(est, float(np.max(np.where(np.isfinite(w), w, np.inf))) * _ratio(mags))
    return est


def u2_truncated(model: ModelInstance, t, n_max: int = 3, support_cap: int | None = None,
                 stats: BlockStatistics | None = None, table: UrsellTable | None = None,
                 a: float = 1.0) -> ExpansionSeries:
    """Cluster series of log Xi up to n_max polymers, with Delta U as term-by-term differences."""
    em = expansion_model(model)
    stats = stats or moments(em)
    measures = _site_measures(em)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if support_cap is None:
        support_cap = min(len(em.volume.sites), 8)
    polymers = enumerate_polymers(em, support_cap)
    clusters: list[Cluster] = cluster_enumeration(polymers, n_max, table=table)
    tt = np.concatenate([[0.0], t])
    G = [gamma_weight(em, R, tt, stats, dressed=True, measures=measures) for R in polymers]
    Gabs = [gamma_abs(em, R, measures) for R in polymers]

    U2 = np.zeros(len(t), dtype=complex)
    U2_0 = 0j
    dU = np.zeros(len(t), dtype=complex)
    order_terms = [np.zeros(len(t), dtype=complex) for _ in range(n_max)]
    mags = [0.0] * n_max
    for c in clusters:
        coef = float(c.coefficient)
        prod = np.ones(len(tt), dtype=complex)
        pabs = 1.0
        for i in c.members:
            prod = prod * G[i]
            pabs *= Gabs[i]
        U2 += coef * prod[1:]
        U2_0 += coef * prod[0]
        diff = coef * (prod[1:] - prod[0])
        dU += diff
        order_terms[c.order - 1] += diff
        mags[c.order - 1] += abs(coef) * pabs

    flags = []
    gk = _finite_gk_margin(em, polymers, Gabs, a)
    if gk < 0:
        flags.append("gruber_kunz_margin_negative")
    if any(m1 >= m0 for m0, m1 in zip(mags, mags[1:]) if m0 > 0):
        flags.append("magnitudes_not_decreasing")
    U1 = u1(model, t, stats, measures)
    with np.errstate(over="ignore", invalid="ignore"):
        cf_abs = np.abs(np.exp(U1 + dU))
    return ExpansionSeries(
        t_grid=t, n_max=n_max, support_cap=support_cap, statistics=stats,
        U1=U1, U2=U2, U2_zero=U2_0, delta_U=dU,
        order_terms=order_terms, magnitudes=mags,
        grid_magnitudes=[float(np.max(np.abs(o))) if len(t) else 0.0 for o in order_terms],
        tail_estimate=_tail(mags, order_terms[-1] if n_max else None, cf_abs), polymer_count=len(polymers), cluster_count=len(clusters),
        gk_margin=gk, flags=flags,
    )


def _finite_gk_margin(model: ModelInstance, polymers, Gabs, a: float) -> float:
    worst = 0.0
    for x in model.volume.sites:
        s = sum(g * math.exp(a * len(R.support)) for R, g in zip(polymers, Gabs) if x in R.support)
        worst = max(worst, s)
    return math.expm1(a) - worst


def delta_u(model: ModelInstance, t, n_max: int = 3, support_cap: int | None = None,
            stats: BlockStatistics | None = None):
    """U2(t) - U2(0) from the truncated series; a scalar for scalar t."""
    scalar = np.ndim(t) == 0
    s = u2_truncated(model, t, n_max, support_cap, stats)
    out = s.delta_U.copy()
    out[np.atleast_1d(np.asarray(t, dtype=float)) == 0.0] = 0.0
    return complex(out[0]) if scalar else out


@dataclass
class ReconstructionReport:
    trace: CharacteristicTrace
    brute: CharacteristicTrace
    deviation: np.ndarray
    max_deviation: float
    series: ExpansionSeries

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation, "series": self.series.to_dict()}


def reconstruct_cf(model: ModelInstance, t_grid, n_max: int = 3, support_cap: int | None = None,
                   stats: BlockStatistics | None = None) -> ReconstructionReport:
    """exp(U1 + Delta U) with the mean-centering phase, against the exact trace of the same block."""
    em = expansion_model(model)
    stats = stats or moments(em)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    series = u2_truncated(model, t, n_max, support_cap, stats)
    phase = np.exp(-1j * t * stats.mean_S / stats.sqrt_D)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = phase * np.exp(series.U1 + series.delta_U)
    vals[t == 0.0] = 1.0
    rec = CharacteristicTrace(t_grid=t, values=vals, digest=em.digest(), statistics=stats)
    brute = char_fn(em, t, stats)
    dev = np.abs(vals - brute.values)
    dev[~np.isfinite(dev)] = np.inf  # the truncated series blew up (near a zero of a site cf)
    return ReconstructionReport(rec, brute, dev, float(np.max(dev)) if len(t) else 0.0, series)
