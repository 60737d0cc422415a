"""Three-zone TAP reactor simulator (method of lines, finite volumes).

Gas species obey ``e dc/dt = d/dx(D dc/dx) + r`` along the reactor, with a
closed inlet and a vacuum (c = 0) outlet; reactions act only inside the
catalyst zone, where adspecies evolve as ``dc/dt = r`` without transport.
Diffusivities follow Knudsen scaling ``D_i = D_ref sqrt(M_ref / M_i)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .network import ReactionNetwork, mass_action_jacobian, mass_action_terms

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when the stiff integrator fails; carries the last time reached."""

    def __init__(self, message, t_reached):
        super().__init__(f"{message} (reached t = {t_reached:.6g} s)")
        self.t_reached = t_reached


@dataclass(frozen=True)
class ReactorConfig:
    zone_lengths: tuple = (1.85, 0.1, 1.85)
    voidage: tuple = (0.4, 0.4, 0.4)
    cross_section_area: float = 1.0
    diffusion_ref: float = 16.0
    ref_molar_mass: float = 40.0
    site_density: float = 30.0
    grid_points: tuple = (60, 5, 60)
    time_horizon: float = 3.0
    output_timestep: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-12

    def __post_init__(self):
        if len(self.zone_lengths) != 3 or min(self.zone_lengths) <= 0:
            raise ValueError("zone_lengths needs three positive lengths")
        void = self.voidage
        if np.isscalar(void):
            void = (float(void),) * 3
        object.__setattr__(self, "voidage", tuple(float(v) for v in void))
        object.__setattr__(self, "zone_lengths", tuple(float(v) for v in self.zone_lengths))
        object.__setattr__(self, "grid_points", tuple(int(v) for v in self.grid_points))
        if not all(0 < v < 1 for v in self.voidage):
            raise ValueError("voidage must lie in (0, 1)")
        for name in ("cross_section_area", "diffusion_ref", "ref_molar_mass", "site_density",
                     "time_horizon", "output_timestep"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if min(self.grid_points) < 1:
            raise ValueError("every zone needs at least one grid cell")
        if self.catalyst_length > 0.1 * self.length:
            warnings.warn("catalyst zone exceeds 10% of the reactor; thin-zone "
                          "approximation will be poor", stacklevel=2)

    @property
    def length(self) -> float:
        return float(sum(self.zone_lengths))

    @property
    def catalyst_length(self) -> float:
        return self.zone_lengths[1]

    @property
    def catalyst_voidage(self) -> float:
        return self.voidage[1]

    def diffusivities(self, molar_masses) -> np.ndarray:
        return self.diffusion_ref * np.sqrt(self.ref_molar_mass / np.asarray(molar_masses, float))

    def output_times(self) -> np.ndarray:
        n = int(round(self.time_horizon / self.output_timestep))
        return np.linspace(0.0, n * self.output_timestep, n + 1)

    def refined(self, factor: int = 2) -> "ReactorConfig":
        return replace(self, grid_points=tuple(factor * g for g in self.grid_points))


@dataclass(frozen=True)
class PulseSpec:
    """Injected amounts (nmol, one per gas species) and injection width (cm).

    ``injection_width=None`` spreads the pulse over the first two inlet cells.
    """

    intensities: tuple
    injection_width: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        if any(v < 0 for v in self.intensities):
            raise ValueError("pulse intensities must be nonnegative")


@dataclass
class PulseRecord:
    """Output of one simulated pulse on the configured time grid.

    Fluxes at the catalyst-zone faces are per unit area, nmol/(cm^2 s);
    ``outlet_flux`` is the total outlet flow, nmol/s.
    """

    times: np.ndarray
    outlet_flux: np.ndarray
    thin_zone_conc: np.ndarray
    boundary_flux_in: np.ndarray
    boundary_flux_out: np.ndarray
    surface_state_initial: np.ndarray
    surface_state_final: np.ndarray
    escaped: np.ndarray
    gas_inventory: np.ndarray
    surface_inventory: np.ndarray
    intensities: np.ndarray
    pulse_index: int = 0
    meta: dict = field(default_factory=dict)


class _Grid:
    """Cell geometry shared by every gas species."""

    def __init__(self, cfg: ReactorConfig):
        widths, void, zone = [], [], []
        for z, (L, n) in enumerate(zip(cfg.zone_lengths, cfg.grid_points)):
            widths += [L / n] * n
            void += [cfg.voidage[z]] * n
            zone += [z] * n
        self.h = np.array(widths)
        self.e = np.array(void)
        self.zone = np.array(zone)
        self.n = len(self.h)
        self.cat = np.flatnonzero(self.zone == 1)
        # face conductance / D between neighbouring cells; last entry is the outlet face
        dist = 0.5 * (self.h[:-1] + self.h[1:])
        self.inv_dist = np.append(1.0 / dist, 2.0 / self.h[-1])

    def laplacian(self) -> sparse.csr_matrix:
        """Operator L with (L c)_a = (F_{a-1/2} - F_{a+1/2}) / (e_a h_a) for D = 1."""
        n, g = self.n, self.inv_dist
        main = np.zeros(n)
        main[:-1] -= g[:-1]
        main[1:] -= g[:-1]
        main[-1] -= g[-1]
        L = sparse.diags([main, g[:-1], g[:-1]], [0, 1, -1], format="csr")
        return sparse.diags(1.0 / (self.e * self.h)) @ L


def _initial_gas(grid: _Grid, cfg: ReactorConfig, pulse: PulseSpec, n_gas: int) -> np.ndarray:
    width = pulse.injection_width
    if width is None:
        width = 2 * grid.h[0]
    if width > cfg.zone_lengths[0] + 1e-12:
        raise ValueError("injection width exceeds the inlet inert zone")
    edges = np.concatenate([[0.0], np.cumsum(grid.h)])
    overlap = np.clip(np.minimum(edges[1:], width) - edges[:-1], 0.0, None)
    frac = overlap / width
    c0 = np.zeros((n_gas, grid.n))
    for i, amount in enumerate(pulse.intensities):
        # amount = A * sum(e h c)
        c0[i] = amount * frac / (cfg.cross_section_area * grid.e * grid.h)
    return c0


def simulate_pulse(reactor: ReactorConfig, net: ReactionNetwork, k, surface0, pulse: PulseSpec,
                   pulse_index: int = 0) -> PulseRecord:
    """Integrate one pulse through the three-zone reactor.

    Parameters
    ----------
    reactor : ReactorConfig
    net : ReactionNetwork
    k : array_like, shape (n_reactions,)
        Rate constants, nonnegative.
    surface0 : array_like, shape (n_surface,)
        Adspecies concentrations in the catalyst zone at t = 0, nmol/cm^3.
    pulse : PulseSpec

    Returns
    -------
    PulseRecord
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (net.n_reactions,) or np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ValueError("rate constants must be finite, nonnegative, one per reaction")
    gi, si = net.gas_index, net.surface_index
    ng, ns = len(gi), len(si)
    surface0 = np.asarray(surface0, dtype=float)
    if surface0.shape != (ns,) or np.any(surface0 < 0):
        raise ValueError(f"surface0 must hold {ns} nonnegative concentrations")
    if len(pulse.intensities) != ng:
        raise ValueError(f"pulse needs {ng} intensities")

    grid = _Grid(reactor)
    nc, ncat = grid.n, len(grid.cat)
    D = reactor.diffusivities(net.molar_masses)
    A = reactor.cross_section_area
    lap = grid.laplacian()
    diff_op = sparse.block_diag([D[i] * lap for i in range(ng)], format="csr")
    n_state = ng * nc + ns * ncat + ng
    n_field = ng * nc + ns * ncat
    out_face = D * grid.inv_dist[-1]  # outlet flux / (A c_last)

    # map each (species, catalyst cell) to its slot in the state vector
    slot = np.empty((net.n_species, ncat), dtype=int)
    for a, i in enumerate(gi):
        slot[i] = a * nc + grid.cat
    for b, i in enumerate(si):
        slot[i] = ng * nc + b * ncat + np.arange(ncat)
    e_cat = grid.e[grid.cat]
    row_scale = np.ones((net.n_species, ncat))
    row_scale[gi] = 1.0 / e_cat
    M = net.stoich

    def rhs(t, y):
        dy = np.zeros(n_state)
        dy[: ng * nc] = diff_op @ y[: ng * nc]
        c_cat = y[slot].T  # (ncat, n_species)
        rates = (k * mass_action_terms(c_cat, net)) @ M.T
        dy[slot] += rates.T * row_scale
        dy[n_field:] = A * out_face * y[(np.arange(ng) + 1) * nc - 1]
        return dy

    # constant part of the Jacobian: diffusion and outlet accumulation
    base = sparse.lil_matrix((n_state, n_state))
    base[: ng * nc, : ng * nc] = diff_op
    for a in range(ng):
        base[n_field + a, (a + 1) * nc - 1] = A * out_face[a]
    base = base.tocsr()
    jr, jc = [], []
    for q in range(ncat):
        for i in range(net.n_species):
            for l in range(net.n_species):
                jr.append(slot[i, q])
                jc.append(slot[l, q])
    jr, jc = np.array(jr), np.array(jc)

    def jac(t, y):
        c_cat = y[slot].T
        dpsi = mass_action_jacobian(c_cat, net)  # (ncat, m, n)
        block = np.einsum("im,qmn->qin", M * k, dpsi)  # d r_i / d c_l per cell
        block *= row_scale.T[:, :, None]
        vals = block.reshape(-1)
        return base + sparse.csr_matrix((vals, (jr, jc)), shape=(n_state, n_state))

    y0 = np.zeros(n_state)
    y0[: ng * nc] = _initial_gas(grid, reactor, pulse, ng).ravel()
    for b in range(ns):
        y0[ng * nc + b * ncat: ng * nc + (b + 1) * ncat] = surface0[b]

    times = reactor.output_times()
    sol = solve_ivp(rhs, (0.0, times[-1]), y0, method="BDF", t_eval=times, jac=jac,
                    rtol=reactor.rtol, atol=reactor.atol)
    if sol.status != 0:
        t_reached = float(sol.t[-1]) if sol.t.size else 0.0
        raise SimulationError(f"stiff integration failed: {sol.message}", t_reached)

    Y = sol.y.T
    gas = Y[:, : ng * nc].reshape(len(times), ng, nc)
    surf = Y[:, ng * nc: n_field].reshape(len(times), ns, ncat)
    first, last = grid.cat[0], grid.cat[-1]
    g_in = grid.inv_dist[first - 1] if first > 0 else 0.0
    g_out = grid.inv_dist[last]
    f_in = D * g_in * (gas[:, :, first - 1] - gas[:, :, first]) if first > 0 else 0.0 * gas[:, :, 0]
    f_out = D * g_out * (gas[:, :, last] - gas[:, :, last + 1])

    thin = np.empty((len(times), net.n_species))
    thin[:, gi] = gas[:, :, grid.cat].mean(axis=2)
    thin[:, si] = surf.mean(axis=2)
    vol = A * grid.h
    return PulseRecord(
        times=times,
        outlet_flux=A * out_face * gas[:, :, -1],
        thin_zone_conc=thin,
        boundary_flux_in=f_in,
        boundary_flux_out=f_out,
        surface_state_initial=surface0.copy(),
        surface_state_final=surf[-1].mean(axis=1).copy(),
        escaped=Y[:, n_field:],
        gas_inventory=(gas * (vol * grid.e)).sum(axis=2),
        surface_inventory=(surf * vol[grid.cat]).sum(axis=2),
        intensities=np.array(pulse.intensities),
        pulse_index=pulse_index,
        meta={"n_steps": int(sol.t.size), "nfev": int(sol.nfev)},
    )


def simulate_pulse_train(reactor, net, k, pulse, n_pulses, surface0=None) -> list[PulseRecord]:
    """Simulate consecutive pulses; each starts from the previous final surface state.

    Gas is fully evacuated between pulses, so every pulse restarts from the
    fresh injection profile. By default the catalyst starts clean: all sites
    free (species named ``"*"``) at the configured site density.
    """
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    if surface0 is None:
        surface0 = clean_surface(net, reactor.site_density)
    records = []
    state = np.asarray(surface0, dtype=float)
    for p in range(n_pulses):
        rec = simulate_pulse(reactor, net, k, state, pulse, pulse_index=p)
        logger.debug("pulse %d done: %s", p, rec.meta)
        records.append(rec)
        state = rec.surface_state_final
    return records


def clean_surface(net: ReactionNetwork, site_density: float) -> np.ndarray:
    s = np.zeros(len(net.surface_index))
    names = [net.species[i].name for i in net.surface_index]
    if "*" in names:
        s[names.index("*")] = site_density
    return s


def _reference_eigen(tau, tol):
    total = np.zeros_like(tau)
    n = 0
    while True:
        term = (-1) ** n * (2 * n + 1) * np.exp(-((n + 0.5) ** 2) * np.pi ** 2 * tau)
        total += term
        n += 1
        if np.all(np.abs(np.pi * term) < tol) and n > 1:
            return np.pi * total


def _reference_images(tau, tol):
    total = np.zeros_like(tau)
    n = 0
    while True:
        term = (-1) ** n * (2 * n + 1) * np.exp(-((2 * n + 1) ** 2) / (4 * tau))
        total += term
        n += 1
        if np.all(np.abs(term / np.sqrt(np.pi * tau ** 3)) < tol) and n > 1:
            return total / np.sqrt(np.pi * tau ** 3)


def inert_reference_curve(tau, tol: float = 1e-10) -> np.ndarray:
    """Dimensionless exit flow of a pure-diffusion pulse (standard diffusion curve).

    ``tau = t D / (e L^2)`` and the flow is ``F e L^2 / (D N_pulse)``. Uses the
    eigenfunction series for tau >= 0.05 and its image-sum equivalent below,
    where the eigen series converges slowly.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    out = np.empty_like(tau)
    big = tau >= 0.05
    if big.any():
        out[big] = _reference_eigen(tau[big], tol)
    if (~big).any():
        out[~big] = _reference_images(tau[~big], tol)
    return out


def dimensionless_outlet(record: PulseRecord, reactor: ReactorConfig, diffusivity: float,
                         species: int = 0):
    """Return ``(tau, flow)`` of one gas species in standard-curve units."""
    e, L = reactor.voidage[0], reactor.length
    amount = record.intensities[species]
    tau = record.times * diffusivity / (e * L ** 2)
    flow = record.outlet_flux[:, species] * e * L ** 2 / (diffusivity * amount)
    return tau, flow
