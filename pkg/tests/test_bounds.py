import math

import numpy as np
import pytest
from scipy import integrate

from clusterlclt.bounds import (
    band_report,
    envelopes,
    gruber_kunz,
    hard_band_tail,
    hard_constant,
    hard_scan,
    jt_mass,
    medium_constant,
    medium_scan,
    pm_moments,
    select_beta,
    select_dilution,
    site_cf_accurate,
    soft_constants,
    soft_scan,
    tree_bound,
)
from clusterlclt.errors import DegeneracyError, NoCertificateError, UnsupportedError, VacuousBoundError
from clusterlclt.expansion import tilted_measure
from clusterlclt.model import (
    BoundaryCondition,
    CouplingField,
    SingleSiteMeasure,
    build_volume,
    chain_volume,
)

from conftest import make_model

NN = CouplingField.nearest_neighbor(1.0, 1)
HALF_NORMAL = math.sqrt(2 / math.pi)


@pytest.fixture
def gauss():
    return make_model(build_volume(1, 3))


def test_envelopes_free_gaussian(gauss):
    env = envelopes(gauss)
    assert np.allclose(env.minus, env.plus, rtol=1e-15)
    x = env.nodes
    assert np.allclose(env.plus, np.exp(-x**2 / 2) / math.sqrt(2 * math.pi), rtol=1e-10)


def test_envelope_ratio_closed_form():
    m = make_model(chain_volume(3), NN, SingleSiteMeasure.uniform(1.0), BoundaryCondition.constant(1.0), beta=0.25)
    env = envelopes(m)
    assert env.beta_theta == pytest.approx(0.5)
    z_up = 2 * (math.exp(0.5) - 1) / 0.5
    z_down = 2 * (1 - math.exp(-0.5)) / 0.5
    ends = np.array([-1.0, 1.0])
    ratio = env.minus_at(m, ends) / env.plus_at(m, ends)
    assert np.allclose(ratio, math.exp(-1.0) * z_down / z_up, rtol=1e-12)
    assert np.all(env.minus <= env.plus)


def test_envelope_sandwich_random_boundaries():
    rng = np.random.default_rng(3)
    for _ in range(20):
        vals = {(y,): float(rng.uniform(-2, 2)) for y in (-3, -2, 2, 3)}
        m = make_model(build_volume(1, 1), CouplingField.finite_range({(1,): 0.6, (2,): -0.3}, 1),
                       SingleSiteMeasure.gaussian(1.0), BoundaryCondition.custom(vals), beta=0.8)
        env = envelopes(m)
        for x in m.volume.sites:
            dens = tilted_measure(m, x).density
            assert np.all(env.minus <= dens * (1 + 1e-12))
            assert np.all(dens <= env.plus * (1 + 1e-12))


def test_pm_moments(gauss):
    env = envelopes(gauss)
    assert pm_moments(env, 0) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert pm_moments(env, 1)[0] == pytest.approx(HALF_NORMAL, abs=1e-12)
    assert pm_moments(env, 2)[1] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        pm_moments(env, 9)


def test_soft_constants(gauss):
    sc = soft_constants(gauss)
    assert sc.c1 == pytest.approx(0.9 * (1 - 2 / math.pi) / 2, rel=1e-10)
    assert sc.c1 <= (sc.moments_minus[2] - sc.moments_minus[1] ** 2) / 2
    assert 0 < sc.delta0 <= 1
    assert soft_scan(gauss, sc.c1, sc.delta0).violations == 0
    narrow = make_model(chain_volume(1), measure=SingleSiteMeasure.discrete([-1e-8, 1e-8]))
    with pytest.raises(DegeneracyError):
        soft_constants(narrow)


def test_c1_positive_on_corpus():
    for meas in (SingleSiteMeasure.uniform(2.0), SingleSiteMeasure.gaussian(0.3),
                 SingleSiteMeasure.bounded_polynomial(1.0, [0, 0, 1.0, 0, 2.0]),
                 SingleSiteMeasure.polynomial([0, 0, 0.5, 0, 0.1], A=0.25)):
        m = make_model(chain_volume(3), NN, meas, BoundaryCondition.constant(0.5), beta=0.2)
        assert soft_constants(m).c1 > 0


def test_c1_degenerate_for_constant_modulus_spins():
    # |sigma| = 1 almost surely, so the absolute-moment variance proxy vanishes
    m = make_model(chain_volume(3), NN, SingleSiteMeasure.ising(), beta=0.2)
    with pytest.raises(DegeneracyError):
        soft_constants(m)


def test_medium_constant(gauss):
    eta = medium_constant(gauss, 0.5, 1.0)
    assert eta > 0
    assert medium_scan(gauss, eta, 0.5, 1.0).violations == 0
    small = [medium_constant(gauss, d, 1.0) for d in (1e-1, 1e-2, 1e-3)]
    assert small[0] > small[1] > small[2] and small[2] < 1e-6
    with pytest.raises(ValueError):
        medium_constant(gauss, 1.0, 0.5)


def test_jt_mass_against_double_quadrature(gauss):
    def inner(s):
        return 2 * (integrate.quad(lambda u: math.exp(-(s + u) ** 2 / 2), 2, math.pi)[0]) / (2 * math.pi)

    direct = integrate.quad(lambda s: math.exp(-s * s / 2) * inner(s), -12, 12)[0]
    assert jt_mass(gauss, 1.0) == pytest.approx(direct, rel=1e-5)


def test_medium_vacuous_for_coarse_support():
    m = make_model(chain_volume(2), measure=SingleSiteMeasure.ising())
    with pytest.raises(VacuousBoundError):
        medium_constant(m, 0.1, 0.5)  # |s - s'| in {0, 2} misses [4, 2 pi]


def test_hard_constant(gauss):
    g = hard_constant(gauss)
    assert g == pytest.approx(HALF_NORMAL, abs=1e-10)
    assert hard_scan(gauss, g, 1.0).violations == 0
    with pytest.raises(UnsupportedError):
        hard_constant(make_model(chain_volume(2), measure=SingleSiteMeasure.ising()))
    # F' bounded by K = 1 on [-1, 1]: gamma <= K * mass + the boundary values
    m = make_model(chain_volume(1), measure=SingleSiteMeasure.bounded_polynomial(1.0, [0, 0, 0.5]))
    env = envelopes(m)
    edge = float(np.sum(env.plus_at(m, np.array([-1.0, 1.0]))))
    assert hard_constant(m) <= 1.0 * float(np.sum(env.plus_weights)) + edge + 1e-12


def test_hard_band_closed_form():
    gamma, sD, T = 0.8, 2.5, 1.3
    for n in (2, 3, 5, 8):
        lo = T * sD
        num = integrate.quad(lambda t: (gamma * sD / t) ** n, lo, np.inf, epsabs=0, epsrel=1e-12)[0]
        assert hard_band_tail(gamma, sD, n, T) == pytest.approx(num, rel=1e-8)


def test_site_cf_accurate():
    u = make_model(chain_volume(1), measure=SingleSiteMeasure.uniform(1.0))
    s = np.array([0.0, 0.5, 10.0, 99.0])
    assert np.allclose(site_cf_accurate(u, s), np.sinc(s / np.pi), atol=1e-14)


def test_band_report(gauss):
    rep = band_report(gauss, 0.5, 1.0)
    d = rep.to_dict()
    assert rep.violations == 0 and d["slack_factor"] == 0.9
    assert d["provenance"]["jt_mass"] > 0


def test_gruber_kunz_zero_coupling():
    m = make_model(chain_volume(3), measure=SingleSiteMeasure.ising())
    c = gruber_kunz(m, 0.3)
    assert c.lhs == 0 and c.passes and c.margin == pytest.approx(math.expm1(0.3))


def test_gruber_kunz_chain():
    m = make_model(chain_volume(4), NN, SingleSiteMeasure.ising(), beta=0.025)
    c = gruber_kunz(m, 1.0)
    assert c.beta_hat == pytest.approx(0.05) and c.passes and c.margin > 0
    assert c.lhs == pytest.approx(c.partial + c.remainder)
    lhs = [gruber_kunz(m.with_beta(b), 1.0).partial for b in np.linspace(0.01, 0.5, 10)]
    assert all(x <= y for x, y in zip(lhs, lhs[1:]))
    hot = gruber_kunz(m.with_beta(0.5), 1.0)
    assert not hot.conclusive and not hot.passes


def test_tree_bound_dominates_partial_sum():
    for beta in (0.005, 0.01, 0.025):
        m = make_model(chain_volume(4), NN, SingleSiteMeasure.ising(), beta=beta)
        tb = tree_bound(m, 1.0)
        assert tb.lhs >= gruber_kunz(m, 1.0).partial


def test_tree_bound_examples():
    m = make_model(chain_volume(3), NN, SingleSiteMeasure.ising(), beta=0.3)
    zero = tree_bound(m, 1.0, r0=2)
    assert zero.beta_hat == 0 and zero.bound == 0 and zero.passes
    g = make_model(chain_volume(3), NN, SingleSiteMeasure.gaussian(0.5), beta=0.025)
    tb = tree_bound(g, 1.0)
    G = integrate.quad(lambda s: math.exp(abs(s) + s * s / 4 - s * s), -np.inf, np.inf)[0] / math.sqrt(math.pi)
    assert tb.G_displayed == pytest.approx(G, rel=1e-9)
    assert tb.lhs == pytest.approx(2 * (math.e * tb.G) ** 2 * 0.05, rel=1e-12)
    assert tb.dil1 and tb.dil2 and not tb.dil3 and tb.bound is None
    assert len(tb.theta_moments) == 9


def test_select_dilution():
    fr = make_model(build_volume(1, 2), CouplingField.finite_range({(1,): 1.0, (2,): 0.5}, 1),
                    SingleSiteMeasure.uniform(1.0), beta=5.0)
    r, cert = select_dilution(fr, 0.01)
    assert r <= 3 and cert.passes
    assert select_dilution(make_model(build_volume(1, 1), measure=SingleSiteMeasure.ising()), 0.5)[0] == 1
    pl = make_model(build_volume(1, 3), CouplingField.power_law(1.0, 2.0, 1), SingleSiteMeasure.uniform(1.0))
    r, cert = select_dilution(pl, 0.1)
    assert 1 < r < 2**16 and cert.dil1 and cert.dil2 and cert.dil3
    assert not tree_bound(pl, math.log1p(0.1), r - 1, uniform=True).passes
    with pytest.raises(NoCertificateError):
        select_dilution(pl, 0.1, r_max=64)
    with pytest.raises(UnsupportedError):
        select_dilution(make_model(build_volume(1, 1)), 0.1)


def test_select_beta():
    g = make_model(chain_volume(3), NN, SingleSiteMeasure.gaussian(0.5), beta=0.1)
    b, cert = select_beta(g, 0.1)
    assert cert.passes and 1e-8 < b < 0.25
    assert not tree_bound(g.with_beta(b * 1.01), math.log1p(0.1)).passes
    with pytest.raises(UnsupportedError):
        select_beta(make_model(chain_volume(2), NN, SingleSiteMeasure.uniform(1.0)), 0.1)
