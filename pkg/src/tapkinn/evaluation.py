"""Post-fit assessment: ODE rebuilds, parity metrics, parameter errors, sensitivities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ReactionNetwork, mass_action_jacobian, mass_action_terms

BOLTZMANN_EV = 8.617333262e-5  # eV/K


def parity_metrics(predicted, target):
    """Mean absolute error and coefficient of determination.

    r^2 is NaN when the target has zero variance.
    """
    p = np.asarray(predicted, float).ravel()
    y = np.asarray(target, float).ravel()
    if p.shape != y.shape or p.size < 2:
        raise ValueError("need two equal-length series with at least 2 points")
    ok = np.isfinite(p) & np.isfinite(y)
    p, y = p[ok], y[ok]
    mae = float(np.mean(np.abs(p - y)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return mae, float("nan")
    return mae, 1.0 - float(np.sum((p - y) ** 2)) / ss_tot


def log_ratio_error(k_fit, k_true):
    """Mean |ln(k_fit / k_true)|; pairs with k_true == 0 are skipped."""
    k_fit = np.asarray(k_fit, float)
    k_true = np.asarray(k_true, float)
    keep = k_true > 0
    if np.any(k_fit[keep] <= 0):
        return float("inf")
    return float(np.mean(np.abs(np.log(k_fit[keep] / k_true[keep]))))


def energy_scale_mae(k_fit, k_true, temperature=800.0):
    """Rate-constant error expressed as an activation free-energy MAE.

    With equal prefactors in the Eyring expression, ``ln(k1/k2)`` maps to
    ``k_B T ln(k1/k2)`` in energy. Returns ``(mae_eV, mean_abs_log_ratio)``.
    """
    k_fit = np.asarray(k_fit, float)
    k_true = np.asarray(k_true, float)
    if np.any(k_fit <= 0) or np.any(k_true <= 0):
        raise ValueError("rate constants must be positive")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    mean_ln = float(np.mean(np.abs(np.log(k_fit / k_true))))
    return BOLTZMANN_EV * temperature * mean_ln, mean_ln


def rebuild_ode(k, net: ReactionNetwork, times, net_flux, c0, voidage, substeps=1, tol=1e-12,
                max_newton=30):
    """Integrate the thin-zone ODE ``e dc/dt = g + r`` (gas), ``dc/dt = r`` (surface).

    ``net_flux`` (shape (T, n_gas)) is the tabulated ``g(t)`` on ``times``,
    linear in between. The implicit trapezoidal rule steps along the data
    grid (optionally ``substeps`` per interval), so every kink of a noisy
    forcing sits on a step boundary; an adaptive solver would stall there.
    Newton uses the analytic Jacobian.

    Returns the concentrations on ``times``, shape (T, n_species).
    """
    k = np.asarray(k, float)
    times = np.asarray(times, float)
    G = np.asarray(net_flux, float)
    if G.shape != (len(times), len(net.gas_index)):
        raise ValueError(f"net_flux must have shape {(len(times), len(net.gas_index))}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    gi = net.gas_index
    n = net.n_species
    fac = np.ones(n)
    fac[gi] = 1.0 / voidage
    Mk = net.stoich * k
    eye = np.eye(n)

    def rhs(c, g):
        out = Mk @ mass_action_terms(c, net)
        out[gi] += g
        return fac * out

    out = np.empty((len(times), n))
    c = np.asarray(c0, float).copy()
    out[0] = c
    for i in range(len(times) - 1):
        h = (times[i + 1] - times[i]) / substeps
        for s in range(substeps):
            ga = G[i] + (s / substeps) * (G[i + 1] - G[i])
            gb = G[i] + ((s + 1) / substeps) * (G[i + 1] - G[i])
            fa = rhs(c, ga)
            base = c + 0.5 * h * fa
            x = c + h * fa  # explicit Euler predictor
            for _ in range(max_newton):
                F = x - base - 0.5 * h * rhs(x, gb)
                J = eye - 0.5 * h * fac[:, None] * (Mk @ mass_action_jacobian(x, net))
                dx = np.linalg.solve(J, F)
                x = x - dx
                if not np.all(np.isfinite(x)):
                    break
                if np.max(np.abs(dx)) <= tol * (1.0 + np.max(np.abs(x))):
                    break
            else:
                raise RuntimeError(f"ODE rebuild: Newton did not converge at t = {times[i]:.6g}")
            if not np.all(np.isfinite(x)):
                raise RuntimeError(f"ODE rebuild diverged at t = {times[i]:.6g}")
            c = x
        out[i + 1] = c
    return out


@dataclass
class UncertaintyReport:
    """Inverse-Hessian sensitivity of the loss to each rate constant.

    Not a rigorous confidence interval: the Hessian depends on the loss
    weights alpha and beta.
    """

    k: np.ndarray
    covariance: np.ndarray
    sigma: np.ndarray
    hessian: np.ndarray
    condition_number: float
    regularized: bool
    alpha: float = float("nan")
    beta: float = float("nan")
    label: str = "sensitivity proxy (inverse Hessian of the loss), not a confidence interval"

    @property
    def relative_sigma(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.sigma / np.abs(self.k)


def inverse_hessian_std(grad, k, rel_step=1e-4, ridge_threshold=1e-10):
    """Sigma from ``sqrt(diag(H^-1))`` with H from central differences of ``grad``.

    ``grad(k)`` returns the loss gradient with respect to k. A ridge lifts the
    smallest eigenvalue to ``ridge_threshold`` when needed; the report flags it.
    """
    k = np.asarray(k, float)
    m = k.size
    H = np.empty((m, m))
    for j in range(m):
        h = rel_step * max(abs(k[j]), 1e-8)
        kp, km = k.copy(), k.copy()
        kp[j] += h
        km[j] -= h
        H[:, j] = (np.asarray(grad(kp)) - np.asarray(grad(km))) / (2 * h)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite Hessian entries")
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    regularized = bool(eig[0] < ridge_threshold)
    Hreg = H + (ridge_threshold - eig[0]) * np.eye(m) if regularized else H
    P = np.linalg.inv(Hreg)
    P = 0.5 * (P + P.T)
    eig_reg = np.linalg.eigvalsh(Hreg)
    return UncertaintyReport(
        k=k.copy(),
        covariance=P,
        sigma=np.sqrt(np.clip(np.diag(P), 0.0, None)),
        hessian=H,
        condition_number=float(eig_reg[-1] / eig_reg[0]),
        regularized=regularized,
    )


def parameter_std(objective, params, alpha, beta=0.0, rel_step=1e-4):
    """Inverse-Hessian sigma of a trained KINN with respect to its rate constants."""
    from .kinn import KinnParameters

    def grad(k):
        p = KinnParameters(params.layer_sizes, params.weights, np.abs(k))
        _, _, gk = objective.loss_and_grad(p, alpha, beta)
        return gk  # raw == k > 0 here, so d/dk == d/draw

    rep = inverse_hessian_std(grad, params.k, rel_step)
    rep.alpha, rep.beta = alpha, beta
    return rep
