import time
import warnings

import numpy as np
import pytest

from tapkinn.network import get_preset
from tapkinn.reactor import (PulseSpec, ReactorConfig, SimulationError, _reference_eigen,
                             _reference_images, clean_surface, dimensionless_outlet,
                             inert_reference_curve, simulate_pulse, simulate_pulse_train)


def inert_run(cfg=None):
    net, k = get_preset("inert-argon")
    cfg = cfg or ReactorConfig()
    return cfg, simulate_pulse(cfg, net, k, np.zeros(0), PulseSpec((1.0,)))


def test_reference_series_agree_where_both_converge():
    tau = np.linspace(0.03, 0.3, 40)
    np.testing.assert_allclose(_reference_eigen(tau, 1e-14), _reference_images(tau, 1e-14),
                               rtol=1e-9, atol=1e-12)


def test_reference_curve_properties():
    tau = np.linspace(1e-4, 6.0, 200001)
    f = inert_reference_curve(tau)
    assert np.all(f >= -1e-12)
    assert abs(np.trapezoid(f, tau) - 1.0) < 1e-6
    i = np.argmax(f)
    # peak of the standard diffusion curve: tau = 1/6, height about 1.85
    assert abs(tau[i] - 1 / 6) < 1e-3
    assert abs(f[i] - 1.85) < 0.01
    with pytest.raises(ValueError):
        inert_reference_curve([0.0])


def test_inert_pulse_matches_standard_curve():
    t0 = time.perf_counter()
    cfg, rec = inert_run()
    elapsed = time.perf_counter() - t0
    tau, flow = dimensionless_outlet(rec, cfg, cfg.diffusion_ref)
    i = np.argmax(flow)
    assert abs(flow[i] - 1.85) <= 0.04
    assert abs(tau[i] - 0.17) <= 0.01
    m0 = np.trapezoid(rec.outlet_flux[:, 0], rec.times)
    assert abs(m0 - 1.0) <= 0.005
    assert elapsed < 10.0
    ref = inert_reference_curve(tau[1:])
    assert np.max(np.abs(flow[1:] - ref)) < 0.05 * ref.max()


def test_inert_mass_balance_exact():
    _, rec = inert_run()
    total = rec.gas_inventory[:, 0] + rec.escaped[:, 0]
    np.testing.assert_allclose(total, 1.0, rtol=1e-6)


def test_grid_refinement_converges():
    cfg = ReactorConfig(grid_points=(30, 3, 30), time_horizon=1.5)
    errs = []
    for c in (cfg, cfg.refined(2)):
        c, rec = inert_run(c)
        tau, flow = dimensionless_outlet(rec, c, c.diffusion_ref)
        errs.append(np.max(np.abs(flow[1:] - inert_reference_curve(tau[1:]))))
    assert errs[1] < errs[0]


def test_element_and_site_balance_with_reaction(co_net, single_record):
    net, k = co_net
    rec = single_record
    E = net.composition
    gi, si = net.gas_index, net.surface_index
    injected = E[:, gi] @ np.array([1.0, 1.0, 0.0])
    initial_surface = E[:, si] @ rec.surface_inventory[0]
    for r in (0, len(rec.times) // 3, -1):
        now = (E[:, gi] @ (rec.gas_inventory[r] + rec.escaped[r])
               + E[:, si] @ rec.surface_inventory[r])
        np.testing.assert_allclose(now, injected + initial_surface, rtol=1e-6, atol=1e-9)
    sites = rec.surface_inventory.sum(axis=1)
    np.testing.assert_allclose(sites, sites[0], rtol=1e-8)


def test_pulse_train_surface_trends(pulse_train, co_net):
    net, _ = co_net
    o = [r.surface_state_initial[net.index("O*") - net.n_gas] for r in pulse_train]
    free = [r.surface_state_initial[net.index("*") - net.n_gas] for r in pulse_train]
    assert o[0] == 0.0 and np.all(np.diff(o) > 0)
    assert free[0] == 30.0 and np.all(np.diff(free) < 0)
    for a, b in zip(pulse_train[:-1], pulse_train[1:]):
        np.testing.assert_array_equal(a.surface_state_final, b.surface_state_initial)


def test_record_shapes_and_nonnegativity(single_record, reactor):
    rec = single_record
    T = len(reactor.output_times())
    assert rec.times.shape == (T,)
    assert rec.outlet_flux.shape == (T, 3)
    assert rec.thin_zone_conc.shape == (T, 6)
    assert rec.boundary_flux_in.shape == rec.boundary_flux_out.shape == (T, 3)
    assert np.all(rec.thin_zone_conc >= -1e-9)
    assert np.all(rec.outlet_flux >= -1e-9)


def test_zero_pulse_leaves_everything_at_rest(co_net):
    net, k = co_net
    cfg = ReactorConfig(time_horizon=0.2)
    rec = simulate_pulse(cfg, net, k, clean_surface(net, 30.0), PulseSpec((0.0, 0.0, 0.0)))
    assert np.all(rec.outlet_flux == 0)
    np.testing.assert_array_equal(rec.surface_state_final, [0.0, 0.0, 30.0])


def test_config_validation():
    with pytest.raises(ValueError):
        ReactorConfig(zone_lengths=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        ReactorConfig(voidage=1.2)
    with pytest.raises(ValueError):
        ReactorConfig(time_horizon=-1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ReactorConfig(zone_lengths=(1.0, 1.0, 1.0))
    assert any("thin-zone" in str(x.message) for x in w)
    assert ReactorConfig(voidage=0.5).voidage == (0.5, 0.5, 0.5)


def test_simulate_input_validation(co_net):
    net, k = co_net
    cfg = ReactorConfig(time_horizon=0.1)
    with pytest.raises(ValueError):
        simulate_pulse(cfg, net, -k, clean_surface(net, 30), PulseSpec((1, 1, 0)))
    with pytest.raises(ValueError):
        simulate_pulse(cfg, net, k, np.zeros(2), PulseSpec((1, 1, 0)))
    with pytest.raises(ValueError):
        simulate_pulse(cfg, net, k, clean_surface(net, 30), PulseSpec((1, 1)))
    with pytest.raises(ValueError):
        PulseSpec((-1.0,))
    with pytest.raises(ValueError):
        simulate_pulse_train(cfg, net, k, PulseSpec((1, 1, 0)), 0)


def test_simulation_error_carries_time():
    err = SimulationError("step size too small", 0.25)
    assert err.t_reached == 0.25 and "0.25" in str(err)
