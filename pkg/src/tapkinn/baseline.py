"""Derivative-matching baseline for rate-constant regression.

This is a simplified surrogate for collocation-based DAE fitting: the data
are (optionally) smoothed, differentiated numerically, and the rate
constants solved from the linear-in-k balance

    e dc/dt - g = M (k * psi(c))   (gas)        dc/dt = M (k * psi(c))   (surface)

by nonnegative least squares. Because the derivative comes straight from the
data, noise is amplified; that is exactly the weakness the comparison probes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import PulseDataset, savgol_smooth
from .network import ReactionNetwork, mass_action_terms


def estimate_derivatives(times, conc, smoothing=None):
    """Return ``(c_hat, dc_hat/dt)`` on the input grid.

    ``smoothing`` is None (central differences on the raw data) or a
    ``(window, poly_order)`` pair for a Savitzky-Golay fit, whose polynomial
    derivative is used. Savitzky-Golay requires uniform spacing.
    """
    times = np.asarray(times, float)
    conc = np.asarray(conc, float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if smoothing is None or smoothing == "none":
        return conc.copy(), np.gradient(conc, times, axis=0, edge_order=2)
    try:
        window, order = (int(v) for v in smoothing)
    except (TypeError, ValueError):
        raise ValueError(f"invalid smoothing config {smoothing!r}") from None
    if order < 1:
        raise ValueError("poly_order must be >= 1 for differentiation")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("Savitzky-Golay differentiation needs a uniform grid")
    c_hat = savgol_smooth(conc, window, order)
    dc_hat = savgol_smooth(conc, window, order, deriv=1, delta=dt[0])
    return c_hat, dc_hat


def _smoothing_label(smoothing):
    if smoothing is None or smoothing == "none":
        return "none"
    return "savgol({}, {})".format(*smoothing)


@dataclass
class BaselineResult:
    k: np.ndarray
    converged: np.ndarray
    residual_norm: float
    smoothing: object
    reasons: dict = field(default_factory=dict)
    reaction_names: tuple = ()

    def to_text(self):
        lines = ["method = baseline",
                 "description = derivative-matching NNLS surrogate for collocation fitting",
                 f"smoothing = {_smoothing_label(self.smoothing)}",
                 f"residual_norm = {self.residual_norm:.10g}"]
        for j, name in enumerate(self.reaction_names or range(len(self.k))):
            flag = "converged" if self.converged[j] else f"unconverged ({self.reasons.get(j, '')})"
            lines.append(f"k[{name}] = {self.k[j]:.10g} ; {flag}")
        return "\n".join(lines) + "\n"


def design_matrix(c_hat, net: ReactionNetwork, species):
    """Rows (time, species) and one column per reaction: ``M_ij psi_j(c(t))``."""
    psi = mass_action_terms(c_hat, net)
    blocks = [psi * net.stoich[i] for i in species]
    return np.vstack(blocks)


def fit_k_linear_ls(c_hat, dc_hat, net_flux, net: ReactionNetwork, voidage, observed=None,
                    weights=None, column_tol=1e-10, cond_limit=1e12):
    """Nonnegative least-squares rate constants from derivative estimates.

    Parameters
    ----------
    c_hat, dc_hat : arrays, shape (T, n)
        Smoothed concentrations (all species, needed by psi) and derivatives.
    net_flux : array, shape (T, n_gas)
        ``(f_in - f_out) / l_cat``.
    observed : bool array, shape (n,)
        Channels whose balances enter the regression.
    weights : array, shape (n,)
        Per-species row weights (e.g. 1 / concentration scale).

    A parameter is flagged unconverged when its basis column is negligible,
    when it falls in the near-null space of an ill-conditioned normal matrix,
    or when the nonnegativity bound is active (the estimate collapsed to 0).
    """
    c_hat = np.asarray(c_hat, float)
    dc_hat = np.asarray(dc_hat, float)
    g = np.asarray(net_flux, float)
    n = net.n_species
    observed = np.ones(n, bool) if observed is None else np.asarray(observed, bool)
    if not observed.any():
        raise ValueError("no observed channels")
    weights = np.ones(n) if weights is None else np.asarray(weights, float)
    gas_pos = {int(i): a for a, i in enumerate(net.gas_index)}
    species = [i for i in range(n) if observed[i]]
    psi = mass_action_terms(np.clip(c_hat, 0.0, None), net)
    A_blocks, b_blocks = [], []
    for i in species:
        if i in gas_pos:
            target = voidage * dc_hat[:, i] - g[:, gas_pos[i]]
        else:
            target = dc_hat[:, i]
        A_blocks.append(weights[i] * psi * net.stoich[i])
        b_blocks.append(weights[i] * target)
    A = np.vstack(A_blocks)
    b = np.concatenate(b_blocks)
    ok = np.all(np.isfinite(A), axis=1) & np.isfinite(b)
    A, b = A[ok], b[ok]

    m = net.n_reactions
    norms = np.linalg.norm(A, axis=0)
    converged = np.ones(m, bool)
    reasons = {}
    tiny = norms < column_tol * norms.max() if norms.max() > 0 else np.ones(m, bool)
    for j in np.flatnonzero(tiny):
        converged[j] = False
        reasons[j] = "negligible basis column"
    live = ~tiny
    k = np.zeros(m)
    resid = float(np.linalg.norm(b))
    if live.any():
        An = A[:, live] / norms[live]
        sol, resid = nnls(An, b, maxiter=50 * An.shape[1])
        k[live] = sol / norms[live]
        eig, vec = np.linalg.eigh(An.T @ An)
        if eig[-1] <= 0 or eig[0] <= eig[-1] / cond_limit:
            weak = np.abs(vec[:, 0]) > 0.1
            for j in np.flatnonzero(live)[weak]:
                converged[j] = False
                reasons[j] = "ill-conditioned normal equations"
        for j in np.flatnonzero(live):
            if k[j] == 0.0 and converged[j]:
                converged[j] = False
                reasons[j] = "estimate collapsed to the k = 0 bound"
    return BaselineResult(k=k, converged=converged, residual_norm=float(resid),
                          smoothing=None, reasons=reasons, reaction_names=net.reaction_names)


def reconstruct_adspecies(uptake, uptake_matrix, net: ReactionNetwork):
    """Adspecies concentrations consistent with the atomic uptakes (least squares)."""
    si = net.surface_index
    Es = np.asarray(uptake_matrix, float)[:, si]
    sol, *_ = np.linalg.lstsq(Es, np.asarray(uptake, float).T, rcond=None)
    return np.clip(sol.T, 0.0, None)


class DerivativeMatchingBaseline(BaseEstimator):
    """Estimator wrapper: smooth, differentiate and regress k on a dataset's train pulses.

    In practical datasets the unobserved adspecies are rebuilt from the atomic
    uptakes, i.e. from the same information the KINN receives.
    """

    def __init__(self, network=None, smoothing=None):
        self.network = network
        self.smoothing = smoothing

    def fit(self, X: PulseDataset, y=None):
        net = self.network
        if net is None:
            raise ValueError("a ReactionNetwork is required")
        ds = X
        c_all, dc_all, g_all = [], [], []
        for pid in ds.train_pulses:
            p = ds.pulse(pid)
            keep = p.times_full > 0
            t = p.times_full[keep]
            conc = p.conc_full[keep].copy()
            if not ds.observed.all():
                hidden = ~ds.observed
                ads = reconstruct_adspecies(p.uptake_full[keep], ds.uptake_matrix, net)
                conc[:, hidden] = ads[:, hidden[net.surface_index]]
            c_hat, dc_hat = estimate_derivatives(t, conc, self.smoothing)
            c_all.append(c_hat)
            dc_all.append(dc_hat)
            g_all.append(p.net_flux_full[keep])
        res = fit_k_linear_ls(np.vstack(c_all), np.vstack(dc_all), np.vstack(g_all), net,
                              ds.voidage, observed=ds.observed,
                              weights=1.0 / ds.scaling.species)
        res.smoothing = self.smoothing
        self.result_ = res
        self.k_ = res.k
        self.converged_ = res.converged
        return self

    def report(self):
        check_is_fitted(self)
        return self.result_.to_text()
