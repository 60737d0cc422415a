import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from tapkinn.data import (ConcentrationScaler, NoiseSpec, SavitzkyGolaySmoother, ScalingInfo,
                          add_noise, build_dataset, savgol_smooth, subsample_times,
                          uptake_series, zeroth_moments)


def test_add_noise_level_and_determinism(rng):
    x = np.sin(np.linspace(0, 10, 20000)) + 2.0
    np.testing.assert_array_equal(add_noise(x, 0.0, rng), x)
    n1 = add_noise(x, 0.5, 7)
    np.testing.assert_array_equal(n1, add_noise(x, 0.5, 7))
    assert abs(np.std(n1 - x) / (0.5 * np.std(x)) - 1) < 0.03
    with pytest.raises(ValueError):
        add_noise(np.array([]), 0.5, 0)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


def test_savgol_polynomial_exactness():
    t = np.linspace(0, 1, 101)
    y = 3 * t ** 2 - t + 1
    np.testing.assert_allclose(savgol_smooth(y, 11, 2), y, atol=1e-10)
    np.testing.assert_allclose(savgol_smooth(y, 11, 2, deriv=1, delta=t[1]), 6 * t - 1, atol=1e-8)
    with pytest.raises(ValueError):
        savgol_smooth(y, 10, 2)
    with pytest.raises(ValueError):
        savgol_smooth(y, 5, 5)


def test_smoother_estimator_api():
    sm = SavitzkyGolaySmoother(window=7, poly_order=2)
    assert sm.get_params() == {"window": 7, "poly_order": 2}
    assert clone(sm).set_params(window=9).window == 9
    X = np.column_stack([np.linspace(0, 1, 50) ** 2, np.linspace(0, 1, 50)])
    np.testing.assert_allclose(sm.fit_transform(X), X, atol=1e-12)


def test_subsample_times_layout():
    t = np.linspace(0, 3, 3001)
    idx = subsample_times(t, 200)
    assert len(idx) == 200 and len(np.unique(idx)) == 200
    assert np.all(np.diff(idx) > 0) and np.all(t[idx] > 0)
    assert np.sum(t[idx] <= 0.5) == 100
    assert t[idx[-1]] == 3.0
    idx = subsample_times(t, 7, split_fraction=0.3)
    assert np.sum(t[idx] <= 0.5) == 3
    with pytest.raises(ValueError):
        subsample_times(t, 0)
    with pytest.raises(ValueError):
        subsample_times(t, 10, split_time=5.0)


def test_zeroth_moment_of_exponential():
    t = np.linspace(0, 40, 400001)
    f = np.column_stack([np.exp(-t), 2 * t * np.exp(-t)])
    np.testing.assert_allclose(zeroth_moments(t, f), [1.0, 2.0], rtol=1e-6)


def test_uptake_matches_surface_inventory(single_record, co_net, reactor):
    """Uptake from gas-side fluxes equals the adspecies element content (ideal, noiseless)."""
    net, _ = co_net
    rec = single_record
    gi, si = net.gas_index, net.surface_index
    E = net.composition
    g = (rec.boundary_flux_in - rec.boundary_flux_out) / reactor.catalyst_length
    U = uptake_series(rec.times, rec.thin_zone_conc[:, gi], g, E[:, gi],
                      reactor.catalyst_voidage, E[:, si] @ rec.surface_state_initial)
    surf = rec.thin_zone_conc[:, si] @ E[:, si].T
    assert np.max(np.abs(U - surf)) < 1e-3 * np.max(np.abs(surf))


@settings(max_examples=50, deadline=None)
@given(scale=arrays(np.float64, 6, elements=st.floats(1e-3, 1e3)),
       x=arrays(np.float64, (5, 6), elements=st.floats(0, 1e3)))
def test_scaling_round_trip(scale, x):
    info = ScalingInfo(species=scale, moments=np.ones(3), uptake=1.0)
    back = info.unscale(info.scale(x))
    np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12)


def test_concentration_scaler():
    X = np.array([[1.0, 2.0, np.nan], [3.0, 1.0, np.nan]])
    sc = ConcentrationScaler(fixed={2: 5.0}).fit(X)
    np.testing.assert_array_equal(sc.scale_, [3.0, 2.0, 5.0])
    np.testing.assert_allclose(sc.inverse_transform(sc.transform(X)), X, rtol=1e-12)
    with pytest.raises(ValueError):
        ConcentrationScaler().fit(np.array([[0.0, 1.0]]))


def test_build_dataset_ideal_single(single_record, co_net, reactor):
    net, _ = co_net
    ds = build_dataset([single_record], net, reactor)
    assert ds.train_pulses == (0,) and ds.test_pulses == ()
    assert not ds.use_moments
    p = ds.pulse(0)
    assert p.targets.shape == (200, 6)
    np.testing.assert_array_equal(ds.scaling.species, single_record.thin_zone_conc.max(axis=0))
    assert np.nanmax(p.targets) <= 1.0
    assert ds.features(p).shape == (200, 1)
    np.testing.assert_array_equal(ds.features(p)[:, 0], np.log(p.t))
    s = ds.stack("train")
    assert s["X"].shape == (200, 1) and s["G"].shape == (200, 3)
    with pytest.raises(ValueError):
        ds.stack("test")


def test_build_dataset_multi_practical(pulse_train, co_net, reactor):
    net, _ = co_net
    ds = build_dataset(pulse_train, net, reactor, mode="practical", noise=NoiseSpec(0.5, 3))
    assert ds.train_pulses == (0, 1, 2, 5, 8) and ds.test_pulses == (3, 4, 6, 7, 9)
    assert ds.use_moments
    assert list(ds.observed) == [True, True, True, False, False, False]
    assert ds.elements == ["C", "O", "site"]
    p = ds.pulse(3)
    assert np.all(np.isnan(p.targets[:, 3:])) and np.all(np.isfinite(p.targets[:, :3]))
    assert ds.features(p).shape == (200, 4)
    np.testing.assert_array_equal(ds.scaling.species[3:], ds.scaling.uptake)
    # the site row of the uptake is the known site total, untouched by noise
    np.testing.assert_allclose(p.uptake[:, 2], 30.0, rtol=1e-12)
    # same seed reproduces bit for bit
    again = build_dataset(pulse_train, net, reactor, mode="practical", noise=NoiseSpec(0.5, 3))
    np.testing.assert_array_equal(again.pulse(3).targets, p.targets)
    other = build_dataset(pulse_train, net, reactor, mode="practical", noise=NoiseSpec(0.5, 4))
    assert not np.array_equal(np.nan_to_num(other.pulse(3).targets), np.nan_to_num(p.targets))


def test_moments_track_oxygen_uptake(pulse_train, co_net, reactor):
    net, _ = co_net
    ds = build_dataset(pulse_train, net, reactor)
    m0_o2 = [ds.pulse(i).moments[1] for i in range(10)]
    assert np.all(np.diff(m0_o2) > 0)  # surface fills, less O2 consumed


def test_build_dataset_errors(pulse_train, co_net, reactor):
    net, _ = co_net
    with pytest.raises(ValueError, match="overlap"):
        build_dataset(pulse_train, net, reactor, train_pulses=(0, 1), test_pulses=(1, 2))
    with pytest.raises(ValueError):
        build_dataset(pulse_train, net, reactor, mode="bogus")
    with pytest.raises(ValueError):
        build_dataset(pulse_train, net, reactor, train_pulses=(0, 42))


def test_flux_noise_modes(pulse_train, co_net, reactor):
    net, _ = co_net
    rec = pulse_train[0]
    g_true = (rec.boundary_flux_in - rec.boundary_flux_out) / reactor.catalyst_length
    kw = dict(mode="practical", noise=NoiseSpec(0.5, 1), train_pulses=(0,), test_pulses=())
    net_ds = build_dataset(pulse_train[:1], net, reactor, flux_noise="net", **kw)
    err = net_ds.pulse(0).net_flux_full - g_true
    np.testing.assert_allclose(np.std(err, axis=0), 0.5 * np.std(g_true, axis=0), rtol=0.05)
    bnd = build_dataset(pulse_train[:1], net, reactor, flux_noise="boundary", **kw)
    assert np.std(bnd.pulse(0).net_flux_full - g_true) > np.std(err)
    smooth = build_dataset(pulse_train[:1], net, reactor, flux_noise="net",
                           flux_smoothing=(31, 3), **kw)
    assert np.std(smooth.pulse(0).net_flux_full - g_true) < 0.5 * np.std(err)
    with pytest.raises(ValueError):
        build_dataset(pulse_train[:1], net, reactor, flux_noise="outlet", **kw)
