import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tapkinn.baseline import (DerivativeMatchingBaseline, estimate_derivatives,
                              fit_k_linear_ls, reconstruct_adspecies)
from tapkinn.data import NoiseSpec, build_dataset
from tapkinn.evaluation import log_ratio_error, rebuild_ode
from tapkinn.network import species_rates


def test_derivatives_exact_for_low_order_polynomials():
    t = np.sort(np.random.default_rng(0).uniform(0, 2, 40))
    lin = np.column_stack([3 * t + 1, -t])
    _, d = estimate_derivatives(t, lin)
    np.testing.assert_allclose(d, [[3.0, -1.0]] * 40, atol=1e-10)
    tu = np.linspace(0, 2, 41)
    quad = (tu ** 2 - 2 * tu)[:, None]
    _, d = estimate_derivatives(tu, quad)
    np.testing.assert_allclose(d[:, 0], 2 * tu - 2, atol=1e-10)
    c, d = estimate_derivatives(tu, quad, (7, 2))
    np.testing.assert_allclose(c, quad, atol=1e-10)
    np.testing.assert_allclose(d[:, 0], 2 * tu - 2, atol=1e-9)


def test_derivative_input_validation():
    t = np.linspace(0, 1, 20)
    with pytest.raises(ValueError):
        estimate_derivatives(t[::-1], np.ones((20, 1)))
    with pytest.raises(ValueError):
        estimate_derivatives(t ** 2, np.ones((20, 1)), (5, 2))
    with pytest.raises(ValueError):
        estimate_derivatives(t, np.ones((20, 1)), (5, 0))
    with pytest.raises(ValueError):
        estimate_derivatives(t, np.ones((20, 1)), "bogus")


def test_halving_the_grid_reduces_derivative_error():
    errs = []
    for n in (50, 100):
        t = np.linspace(0, 3, n)
        _, d = estimate_derivatives(t, np.sin(3 * t)[:, None])
        errs.append(np.max(np.abs(d[:, 0] - 3 * np.cos(3 * t))))
    assert errs[1] < errs[0] / 3  # second-order accurate


def _balance_rhs(conc, flux, k, net, voidage):
    r = species_rates(conc, k, net)
    out = r.copy()
    out[:, net.gas_index] = (flux + r[:, net.gas_index]) / voidage
    return out


def test_raw_derivatives_match_balance_oracle(single_record, co_net, reactor):
    """Finite differences of the simulated thin zone against the exact balance."""
    net, k = co_net
    rec = single_record
    flux = (rec.boundary_flux_in - rec.boundary_flux_out) / reactor.catalyst_length
    keep = rec.times > 0.05  # skip the injection transient
    exact = _balance_rhs(rec.thin_zone_conc, flux, k, net, reactor.catalyst_voidage)[keep]
    _, d = estimate_derivatives(rec.times, rec.thin_zone_conc)
    for i in (0, 1, 3, 4):
        peak = np.max(np.abs(exact[:, i]))
        rms = np.sqrt(np.mean((d[keep, i] - exact[:, i]) ** 2))
        assert rms <= 0.01 * peak, net.names[i]


@pytest.fixture(scope="module")
def ode_consistent(single_record, co_net, reactor):
    net, k = co_net
    rec = single_record
    flux = (rec.boundary_flux_in - rec.boundary_flux_out) / reactor.catalyst_length
    conc = rebuild_ode(k, net, rec.times, flux, rec.thin_zone_conc[0], reactor.catalyst_voidage)
    dc = _balance_rhs(conc, flux, k, net, reactor.catalyst_voidage)
    return conc, dc, flux


def test_exact_derivatives_recover_true_k(ode_consistent, co_net, reactor):
    net, k = co_net
    conc, dc, flux = ode_consistent
    res = fit_k_linear_ls(conc, dc, flux, net, reactor.catalyst_voidage,
                          weights=1.0 / conc.max(axis=0))
    np.testing.assert_allclose(res.k, k, rtol=1e-6)
    assert res.converged.all()
    assert "k[k-3] =" in res.to_text() and "converged" in res.to_text()


def test_zero_targets_give_zero_k(ode_consistent, co_net, reactor):
    net, _ = co_net
    conc, dc, flux = ode_consistent
    res = fit_k_linear_ls(conc, np.zeros_like(dc), np.zeros_like(flux), net,
                          reactor.catalyst_voidage)
    np.testing.assert_array_equal(res.k, 0.0)
    assert not res.converged.any()


def test_empty_observation_set_raises(ode_consistent, co_net, reactor):
    net, _ = co_net
    conc, dc, flux = ode_consistent
    with pytest.raises(ValueError):
        fit_k_linear_ls(conc, dc, flux, net, reactor.catalyst_voidage,
                        observed=np.zeros(6, bool))


@settings(max_examples=30, deadline=None)
@given(c=arrays(np.float64, (12, 6), elements=st.floats(0.0, 10.0)),
       d=arrays(np.float64, (12, 6), elements=st.floats(-10.0, 10.0)),
       g=arrays(np.float64, (12, 3), elements=st.floats(-10.0, 10.0)))
def test_estimates_are_nonnegative(co_net, c, d, g):
    net, _ = co_net
    res = fit_k_linear_ls(c, d, g, net, 0.4)
    assert np.all(res.k >= 0) and np.all(np.isfinite(res.k))


def test_reconstruct_adspecies_inverts_uptake(co_net):
    net, _ = co_net
    ads = np.array([[1.0, 2.0, 27.0], [0.5, 4.0, 25.5]])
    E = np.vstack([net.composition, net.site_counts])
    uptake = ads @ E[:, net.surface_index].T
    np.testing.assert_allclose(reconstruct_adspecies(uptake, E, net), ads, atol=1e-12)


def test_estimator_on_ideal_and_noisy_data(pulse_train, co_net, reactor):
    net, k = co_net
    ideal = build_dataset(pulse_train[:1], net, reactor)
    est = DerivativeMatchingBaseline(net).fit(ideal)
    assert log_ratio_error(est.k_, k) < 0.05
    assert "smoothing = none" in est.report()
    noisy = build_dataset(pulse_train[:1], net, reactor, noise=NoiseSpec(2.0, 0))
    est = DerivativeMatchingBaseline(net, smoothing=(11, 3)).fit(noisy)
    assert "savgol(11, 3)" in est.report()
    assert np.all(est.k_ >= 0)
    with pytest.raises(ValueError):
        DerivativeMatchingBaseline().fit(ideal)
