import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterlclt.errors import ConfigError, DivergenceError, DomainError, SizeError
from clusterlclt.model import (
    BoundaryCondition,
    CouplingField,
    SingleSiteMeasure,
    build_volume,
    chain_volume,
    check_superstability,
    config_digest,
    coupling_sum,
    effective_beta,
    hamiltonian,
    hamiltonian_free,
    model_from_config,
    quadratic_form_check,
    theta,
    theta_bounded,
)

from conftest import make_model


def test_volume_examples():
    v = build_volume(1, 1)
    assert v.sites == ((-1,), (0,), (1,)) and v.diluted_sites == v.sites
    v = build_volume(1, 2, r0=2)
    assert [s[0] for s in v.sites] == [-2, -1, 0, 1, 2]
    assert v.diluted_sites == ((-2,), (0,), (2,))
    assert len(build_volume(2, 1)) == 9


def test_volume_errors():
    with pytest.raises(SizeError):
        build_volume(2, 10)
    with pytest.raises(ValueError):
        build_volume(1, 1, r0=0)


@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 4))
def test_volume_properties(d, k, r0):
    v = build_volume(d, k, r0)
    assert len(v.sites) == (2 * k + 1) ** d
    assert list(v.sites) == sorted(v.sites)
    assert set(v.diluted_sites) == {x for x in v.sites if all(c % r0 == 0 for c in x)}


def test_coupling_sums():
    assert coupling_sum(CouplingField.nearest_neighbor(1.0, 1)) == 2.0
    assert coupling_sum(CouplingField.power_law(1.0, 2.0, 1)) == pytest.approx(math.pi**2 / 3, abs=1e-5)
    assert coupling_sum(CouplingField.zero(1)) == 0.0
    with pytest.raises(DivergenceError):
        CouplingField.power_law(1.0, 1.0, 1)


def test_coupling_symmetry():
    v = build_volume(2, 2)
    for J in (CouplingField.nearest_neighbor(0.7, 2), CouplingField.power_law(1.0, 3.0, 2),
              CouplingField.finite_range({(1, 0): 0.5, (1, 1): -0.25}, 2)):
        M = J.matrix(v.sites)
        assert np.array_equal(M, M.T) and np.all(np.diag(M) == 0)


def test_effective_beta():
    nn = make_model(chain_volume(3), CouplingField.nearest_neighbor(1.0, 1), beta=0.3)
    assert effective_beta(nn, 1) == pytest.approx(0.6)
    assert effective_beta(nn, 2) == 0.0
    pl = make_model(build_volume(1, 2), CouplingField.power_law(1.0, 2.0, 1))
    assert effective_beta(pl, 2) == pytest.approx(math.pi**2 / 12, abs=1e-5)
    vals = [effective_beta(pl, r) for r in range(1, 10)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == pytest.approx(coupling_sum(pl.couplings), rel=1e-12)


def test_theta():
    nn = CouplingField.nearest_neighbor(1.0, 1)
    assert theta(make_model(chain_volume(3), nn)) == 0.0
    m = make_model(build_volume(1, 2), nn, boundary=BoundaryCondition.constant(1.0))
    assert theta(m) == pytest.approx(2.0)
    m3 = make_model(build_volume(1, 2), nn, boundary=BoundaryCondition.constant(3.0))
    assert theta(m3) == pytest.approx(3 * theta(m))
    b = make_model(build_volume(1, 2), nn, SingleSiteMeasure.uniform(1.0), BoundaryCondition.constant(0.5))
    assert theta(b) <= theta_bounded(b)


def test_hamiltonian_examples():
    nn = CouplingField.nearest_neighbor(1.0, 1)
    m = make_model(chain_volume(2), nn, SingleSiteMeasure.ising())
    assert hamiltonian(m, [1.0, 1.0]) == -1.0
    assert hamiltonian(make_model(chain_volume(2), nn), [0.0, 0.0]) == 0.0
    mb = make_model(chain_volume(2), nn, SingleSiteMeasure.ising(), BoundaryCondition.constant(1.0))
    assert hamiltonian(mb, [1.0, -1.0]) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        hamiltonian(m, [1.0, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.randoms(use_true_random=False))
def test_hamiltonian_relabel_and_free_form(sigma, rnd):
    J = CouplingField.power_law(0.8, 2.5, 1)
    m = make_model(build_volume(1, 2), J)
    h = hamiltonian(m, sigma)
    assert h == pytest.approx(hamiltonian_free(m, sigma), abs=1e-12)
    perm = list(range(5))
    rnd.shuffle(perm)
    conf = {m.volume.sites[i]: sigma[i] for i in perm}
    assert hamiltonian(m, conf) == pytest.approx(h, abs=1e-12)


def test_superstability():
    half = make_model(build_volume(1, 1), measure=SingleSiteMeasure.gaussian(1.0, A=0.5))
    assert check_superstability(half, trials=50).violated is False
    zero = make_model(build_volume(1, 1), measure=SingleSiteMeasure.gaussian(0.5, A=1.0))
    assert check_superstability(zero, trials=200).violated is False
    with pytest.raises(ValueError):
        SingleSiteMeasure.gaussian(1.0, A=1.0)  # sigma^2/2 < sigma^2
    g = make_model(build_volume(1, 2), CouplingField.nearest_neighbor(1.0, 1),
                   SingleSiteMeasure.gaussian(0.5, A=0.5), beta=0.1)
    lam, ok = quadratic_form_check(g, 1.0)
    assert ok and lam >= 0.5
    assert check_superstability(g, trials=10_000).violated is False


def test_config_roundtrip_and_errors():
    cfg = {"dimension": 1, "k": 2, "coupling": {"kind": "nearest_neighbor", "J": 1.0},
           "measure": {"kind": "gaussian"}, "boundary": {"kind": "constant", "value": 1.0}, "beta": 0.2}
    m = model_from_config(cfg)
    assert len(m.volume.sites) == 5 and m.beta == 0.2
    reordered = dict(reversed(list(cfg.items())))
    assert config_digest(cfg) == config_digest(reordered)
    assert model_from_config(reordered).digest() == m.digest()
    for bad in ({**cfg, "measure": {"kind": "x"}}, {k: v for k, v in cfg.items() if k != "beta"},
                {**cfg, "beta": -1.0}, {**cfg, "coupling": {}}):
        with pytest.raises(ConfigError):
            model_from_config(bad)
