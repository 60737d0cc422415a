"""Scikit-learn style estimator around the KINN training loop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import PulseDataset, ScalingInfo
from .evaluation import parameter_std, parity_metrics
from .kinn import (KinnObjective, KinnParameters, Stage, TrainingSchedule, annealing_schedule,
                   mlp_forward, n_parameters, train_kinn, unpack, _forward)
from .network import ReactionNetwork

PARAMS_FORMAT = "tapkinn-params"
PARAMS_VERSION = 1


def objective_for(dataset: PulseDataset, net: ReactionNetwork, layer_sizes, which="train"):
    """Build the KINN loss on the train or test pulses of a dataset."""
    s = dataset.stack(which)
    kw = {}
    if dataset.mode == "practical":
        kw = dict(U=s["U"], uptake_matrix=dataset.uptake_matrix,
                  uptake_scale=dataset.scaling.uptake)
    return KinnObjective(layer_sizes, net, s["X"], s["t"], s["Y"], s["G"],
                         dataset.scaling.species, dataset.voidage,
                         observed=dataset.observed, **kw)


def rate_parity(objective: KinnObjective, params: KinnParameters):
    """Network time derivative and rate-law right-hand side, both scaled, shape (P, n)."""
    layers = unpack(params.weights, objective.layer_sizes)
    N, dN, _ = _forward(layers, objective.X)
    eps_m = objective._residuals(N, dN, params.k)[1]
    derived = dN * objective.inv_t
    return derived, derived - eps_m


def fit_metrics(objective: KinnObjective, params: KinnParameters):
    """MAE / r^2 of concentrations (observed channels) and rates, in scaled units.

    The rate r^2 is also given in physical units (``rate_r2_physical``).
    """
    N = mlp_forward(params, objective.X)
    keep = objective.mask > 0
    mae_c, r2_c = parity_metrics(N[keep], objective.Y[keep])
    derived, law = rate_parity(objective, params)
    mae_r, r2_r = parity_metrics(derived, law)
    _, r2_phys = parity_metrics(derived * objective.scale, law * objective.scale)
    return {"conc_mae": mae_c, "conc_r2": r2_c, "rate_mae": mae_r, "rate_r2": r2_r,
            "rate_r2_physical": r2_phys}


def kinn_convergence(k_history, step_size, window=5, drift_tol=0.05, floor_factor=10.0):
    """Per-parameter convergence flags from the per-epoch k trajectory.

    A rate constant is unconverged when it still drifts (``|ln(k_end / k)|``
    over the last ``window`` epochs above ``drift_tol``) or when it sits at
    the zero bound, i.e. below ``floor_factor * step_size``, the scale of the
    optimizer's own jitter around zero. Returns ``(flags, reasons)``.
    """
    K = np.abs(np.asarray(k_history, float))
    k_end = K[-1]
    ref = K[max(0, len(K) - 1 - window)]
    flags = np.ones(k_end.size, bool)
    reasons = {}
    for j in range(k_end.size):
        if k_end[j] < floor_factor * step_size:
            flags[j] = False
            reasons[j] = "estimate collapsed to the k = 0 bound"
        elif abs(np.log(k_end[j] / max(ref[j], 1e-300))) > drift_tol:
            flags[j] = False
            reasons[j] = f"still drifting over the last {window} epochs"
    return flags, reasons


@dataclass
class FitReport:
    """Outcome of a KINN fit; ``to_text`` gives a flat key-value report."""

    k: np.ndarray
    reaction_names: tuple
    rate_units: tuple
    J: float
    j_data: float
    j_model: float
    j_uptake: float
    alpha: float
    beta: float
    history: object
    train_metrics: dict
    test_metrics: dict
    wall_time: float
    seed: int
    schedule: TrainingSchedule
    layer_sizes: tuple
    restart_losses: list = field(default_factory=list)
    converged: np.ndarray = None
    reasons: dict = field(default_factory=dict)

    def to_text(self):
        lines = ["method = kinn",
                 f"layer_sizes = {' '.join(map(str, self.layer_sizes))}",
                 f"seed = {self.seed}",
                 f"restarts = {len(self.restart_losses) or 1}",
                 f"alpha_final = {self.alpha:.10g}",
                 f"beta_final = {self.beta:.10g}",
                 f"J = {self.J:.10g}",
                 f"j_data = {self.j_data:.10g}",
                 f"j_model = {self.j_model:.10g}",
                 f"j_uptake = {self.j_uptake:.10g}"]
        for j, name in enumerate(self.reaction_names):
            ok = self.converged is None or self.converged[j]
            flag = "converged" if ok else f"unconverged ({self.reasons.get(j, '')})"
            lines.append(f"k[{name}] = {self.k[j]:.10g} ; {self.rate_units[j]} ; {flag}")
        for tag, met in (("train", self.train_metrics), ("test", self.test_metrics)):
            for key, v in met.items():
                lines.append(f"{tag}_{key} = {v:.10g}")
        for i, J in enumerate(self.restart_losses):
            lines.append(f"restart_J[{i}] = {J:.10g}")
        sched = self.schedule
        lines.append(f"iterations_per_epoch = {sched.iterations_per_epoch}")
        lines.append(f"step_size = {sched.step_size:g}")
        lines.append("stages = " + "; ".join(
            f"{s.alpha:g},{s.beta:g},{s.epochs}" for s in sched.stages))
        lines.append(f"wall_time_s = {self.wall_time:.3f}")
        return "\n".join(lines) + "\n"


class KINNRegressor(BaseEstimator):
    """Kinetics-informed neural network estimator.

    ``fit`` takes a :class:`PulseDataset`; fitted attributes are ``params_``,
    ``k_``, ``history_`` and ``report_``. With ``n_restarts > 1`` the loop is
    run from seeds ``seed, seed+1, ...`` and the run with the lowest final loss
    J is kept (selection uses no ground truth).

    Parameters
    ----------
    network : ReactionNetwork
    hidden : tuple of int
        Hidden layer widths; input and output sizes come from the dataset.
    stages : list of Stage or (alpha, beta, epochs) tuples, optional
        Defaults to ``annealing_schedule(alpha_end=1e-4, final_epochs=10)``.
    """

    def __init__(self, network=None, hidden=(8,), stages=None, iterations_per_epoch=1000,
                 step_size=1e-3, init_scale_weights=1e-2, init_scale_kinetic=1e-5, seed=0,
                 n_restarts=1):
        self.network = network
        self.hidden = hidden
        self.stages = stages
        self.iterations_per_epoch = iterations_per_epoch
        self.step_size = step_size
        self.init_scale_weights = init_scale_weights
        self.init_scale_kinetic = init_scale_kinetic
        self.seed = seed
        self.n_restarts = n_restarts

    def _schedule(self, seed):
        stages = self.stages
        if stages is None:
            stages = annealing_schedule(alpha_end=1e-4, final_epochs=10)
        return TrainingSchedule(stages=[s if isinstance(s, Stage) else Stage(*s) for s in stages],
                                iterations_per_epoch=self.iterations_per_epoch,
                                step_size=self.step_size,
                                init_scale_weights=self.init_scale_weights,
                                init_scale_kinetic=self.init_scale_kinetic, seed=seed)

    def fit(self, X: PulseDataset, y=None):
        if self.network is None:
            raise ValueError("a ReactionNetwork is required")
        if int(self.n_restarts) < 1:
            raise ValueError("n_restarts must be >= 1")
        ds = X
        net = self.network
        if list(ds.species) != net.names:
            raise ValueError("dataset species order does not match the network")
        n_in = ds.features(ds.pulse(ds.train_pulses[0])).shape[1]
        sizes = (n_in, *map(int, self.hidden), net.n_species)
        obj = objective_for(ds, net, sizes, "train")
        best, losses, wall = None, [], 0.0
        for r in range(int(self.n_restarts)):
            sched = self._schedule(int(self.seed) + r)
            params, hist, wt = train_kinn(obj, sched)
            wall += wt
            losses.append(hist.J[-1])
            if best is None or hist.J[-1] < best[1].J[-1]:
                best = (params, hist, sched)
        params, hist, sched = best
        last = sched.stages[-1]
        J, jd, jm, ju = obj.loss(params, last.alpha, last.beta)
        test_metrics = {}
        if ds.test_pulses:
            test_metrics = fit_metrics(objective_for(ds, net, sizes, "test"), params)
        self.layer_sizes_ = sizes
        self.params_ = params
        self.k_ = params.k
        self.history_ = hist
        self.scaling_ = ds.scaling
        self.use_moments_ = ds.use_moments
        self.objective_ = obj
        conv, reasons = kinn_convergence(hist.k, sched.step_size)
        self.converged_ = conv
        self.report_ = FitReport(
            k=params.k, reaction_names=net.reaction_names, rate_units=net.rate_units,
            J=J, j_data=jd, j_model=jm, j_uptake=ju, alpha=last.alpha, beta=last.beta,
            history=hist, train_metrics=fit_metrics(obj, params), test_metrics=test_metrics,
            wall_time=wall, seed=sched.seed, schedule=sched, layer_sizes=sizes,
            restart_losses=losses if self.n_restarts > 1 else [],
            converged=conv, reasons=reasons)
        return self

    def predict(self, X):
        """Unscaled concentrations for a feature matrix (first column ln t)."""
        check_is_fitted(self)
        return mlp_forward(self.params_, X) * self.scaling_.species

    def predict_pulse(self, times, moments=None):
        """Unscaled concentration trajectories for a pulse with the given m0 features."""
        check_is_fitted(self)
        times = np.asarray(times, float)
        if np.any(times <= 0):
            raise ValueError("times must be positive")
        u = np.log(times)[:, None]
        if self.use_moments_:
            if moments is None:
                raise ValueError("this model needs the pulse's zeroth moments")
            m0 = np.asarray(moments, float) / self.scaling_.moments
            X = np.column_stack([u, np.broadcast_to(m0, (len(times), m0.size))])
        else:
            X = u
        return self.predict(X)

    def uncertainty(self, rel_step=1e-4):
        """Inverse-Hessian sensitivity of the training loss at the final (alpha, beta)."""
        check_is_fitted(self)
        last = self.report_.schedule.stages[-1]
        return parameter_std(self.objective_, self.params_, last.alpha, last.beta, rel_step)


def save_params(path, params: KinnParameters, net: ReactionNetwork, scaling: ScalingInfo):
    """Write parameters as one value per line after a ``#``-prefixed JSON header.

    Header keys: format, version, layer_sizes, species, reactions, rate_units,
    species_scale, moment_scale, uptake_scale, n_weights. The body lists the
    network weights (layer by layer, W row-major then b) followed by k.
    """
    header = {
        "format": PARAMS_FORMAT, "version": PARAMS_VERSION,
        "layer_sizes": list(params.layer_sizes), "species": net.names,
        "reactions": list(net.reaction_names), "rate_units": list(net.rate_units),
        "species_scale": scaling.species.tolist(), "moment_scale": scaling.moments.tolist(),
        "uptake_scale": scaling.uptake, "n_weights": params.n_weights,
    }
    with open(path, "w") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value)}\n")
        for v in np.concatenate([params.weights, params.k]):
            fh.write(f"{float(v)!r}\n")


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(KinnParameters, header dict)``."""
    header, values = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = json.loads(value)
            elif line.strip():
                values.append(float(line))
    if header.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path}: not a {PARAMS_FORMAT} file")
    if header.get("version") != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    sizes = tuple(header["layer_sizes"])
    nw = n_parameters(sizes)
    values = np.array(values)
    if values.size != nw + len(header["reactions"]):
        raise ValueError(f"{path}: expected {nw + len(header['reactions'])} values, got {values.size}")
    return KinnParameters(sizes, values[:nw], values[nw:]), header
