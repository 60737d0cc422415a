"""Kinetics-informed neural network (KINN).

A small swish MLP maps ``(ln t, moment features)`` to scaled thin-zone
concentrations. Training minimises

    J = j_data + alpha * j_model + beta * j_uptake

jointly over the network weights and the rate constants, where ``j_model``
penalises the mismatch between the network's time derivative and the
micro-kinetic rate law plus the measured net flux. Gradients (including the
mixed second-order path through ``dN/du``) are derived by hand: a forward
tangent sweep carries ``dN/du`` alongside the primal pass and a single reverse
sweep differentiates both.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .network import ReactionNetwork

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def n_parameters(layer_sizes) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def unpack(weights, layer_sizes):
    """Split a flat weight vector into ``[(W, b), ...]`` views."""
    weights = np.asarray(weights)
    if weights.shape != (n_parameters(layer_sizes),):
        raise ValueError(f"expected {n_parameters(layer_sizes)} weights, got {weights.shape}")
    layers, pos = [], 0
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = weights[pos: pos + a * b].reshape(a, b)
        pos += a * b
        layers.append((W, weights[pos: pos + b]))
        pos += b
    return layers


@dataclass
class KinnParameters:
    """Network weights (flat) plus the unconstrained kinetic parameters.

    The rate law sees ``k = |kinetic_raw|``.
    """

    layer_sizes: tuple
    weights: np.ndarray
    kinetic_raw: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(v) for v in self.layer_sizes)
        self.weights = np.asarray(self.weights, dtype=float)
        self.kinetic_raw = np.asarray(self.kinetic_raw, dtype=float)
        unpack(self.weights, self.layer_sizes)

    @property
    def k(self):
        return np.abs(self.kinetic_raw)

    @property
    def n_weights(self):
        return self.weights.size

    def copy(self):
        return KinnParameters(self.layer_sizes, self.weights.copy(), self.kinetic_raw.copy())

    @classmethod
    def initialize(cls, layer_sizes, n_kinetic, scale_weights=1e-2, scale_kinetic=1e-5,
                   random_state=None):
        """Uniform weights in [-scale, scale], zero biases, kinetic raw = scale_kinetic."""
        rng = np.random.default_rng(random_state)
        w = np.zeros(n_parameters(layer_sizes))
        for W, _ in unpack(w, layer_sizes):
            W[...] = rng.uniform(-scale_weights, scale_weights, size=W.shape)
        return cls(layer_sizes, w, np.full(n_kinetic, float(scale_kinetic)))


def _forward(layers, X, tangent_col=0):
    """Primal and tangent (d/dX[:, tangent_col]) passes; returns the cache."""
    a = X
    da = np.zeros_like(X)
    da[:, tangent_col] = 1.0
    cache = []
    for W, b in layers[:-1]:
        z = a @ W + b
        dz = da @ W
        sig = _sigmoid(z)
        s1 = sig * (1.0 + z * (1.0 - sig))  # swish'
        cache.append((a, da, z, dz, sig, s1))
        a = z * sig
        da = s1 * dz
    W, b = layers[-1]
    z = a @ W + b
    dz = da @ W
    sig = _sigmoid(z)
    cache.append((a, da, z, dz, sig, None))
    return _softplus(z), sig * dz, cache


def _backward(layers, cache, gN, gdN, layer_sizes):
    """Reverse sweep for adjoints of outputs N and tangent dN; returns flat grad."""
    grads = []
    a, da, z, dz, sig, _ = cache[-1]
    dsig = sig * (1.0 - sig)
    gz = gN * sig + gdN * dsig * dz
    gdz = gdN * sig
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a, da = cache[li][0], cache[li][1]
        grads.append((a.T @ gz + da.T @ gdz, gz.sum(axis=0)))
        if li == 0:
            break
        ga = gz @ W.T
        gda = gdz @ W.T
        _, _, z, dz, sig, s1 = cache[li - 1]
        s2 = sig * (1.0 - sig) * (2.0 + z * (1.0 - 2.0 * sig))  # swish''
        gz = ga * s1 + gda * s2 * dz
        gdz = gda * s1
    out = np.empty(n_parameters(layer_sizes))
    pos = 0
    for gW, gb in reversed(grads):
        out[pos: pos + gW.size] = gW.ravel()
        pos += gW.size
        out[pos: pos + gb.size] = gb
        pos += gb.size
    return out


def mlp_forward(params: KinnParameters, features):
    """Scaled concentrations ``N(features)``, nonnegative via a softplus output."""
    X = _as_features(features, params.layer_sizes[0])
    if not np.all(np.isfinite(params.weights)):
        raise ValueError("non-finite network weights")
    N, _, _ = _forward(unpack(params.weights, params.layer_sizes), X)
    return N


def network_time_derivative(params: KinnParameters, features):
    """``(N, dN/du)`` where u is the first (log-time) feature."""
    X = _as_features(features, params.layer_sizes[0])
    N, dN, _ = _forward(unpack(params.weights, params.layer_sizes), X)
    return N, dN


def _as_features(features, dim):
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != dim:
        raise ValueError(f"expected {dim} features, got {X.shape[1]}")
    return X


def state_and_derivative(params: KinnParameters, t, features, scale):
    """Physical concentrations and their time derivatives at times ``t``.

    ``features[:, 0]`` must equal ``ln t``; ``dc/dt = s * dN/du / t``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    N, dN = network_time_derivative(params, features)
    scale = np.asarray(scale, float)
    return scale * N, scale * dN / t[:, None]


class _RateLaw:
    """Vectorised mass-action law with analytic derivatives for a batch of states."""

    def __init__(self, net: ReactionNetwork):
        self.net = net
        self.M = np.asarray(net.stoich)
        self.terms = [[(int(i), float(net.exponents[j, i])) for i in np.flatnonzero(net.exponents[j])]
                      for j in range(net.n_reactions)]

    def psi(self, c):
        out = np.ones((c.shape[0], len(self.terms)))
        for j, tj in enumerate(self.terms):
            for i, o in tj:
                out[:, j] *= c[:, i] if o == 1 else c[:, i] ** o
        return out

    def dpsi(self, c):
        """List over reactions of [(species, d psi_j / d c_species)]."""
        res = []
        for tj in self.terms:
            parts = []
            for i, o in tj:
                d = o * c[:, i] ** (o - 1) if o != 1 else np.ones(c.shape[0])
                for l, ol in tj:
                    if l != i:
                        d = d * (c[:, l] if ol == 1 else c[:, l] ** ol)
                parts.append((i, d))
            res.append(parts)
        return res


class KinnObjective:
    """Composite KINN loss on a fixed set of training points.

    Parameters
    ----------
    layer_sizes : tuple
    net : ReactionNetwork
    X, t : arrays
        Features (first column ``ln t``) and times of every training point.
    Y : array, shape (P, n)
        Scaled targets; NaN or ``observed=False`` columns are ignored.
    G : array, shape (P, n_gas)
        Net-flux term ``(f_in - f_out) / l_cat``, nmol/(cm^3 s).
    scale : array, shape (n,)
    voidage : float
    U, uptake_matrix, uptake_scale : optional
        Atomic uptake targets, their composition rows over all species and
        the common scale.
    """

    def __init__(self, layer_sizes, net, X, t, Y, G, scale, voidage, observed=None,
                 U=None, uptake_matrix=None, uptake_scale=1.0):
        self.layer_sizes = tuple(layer_sizes)
        self.net = net
        self.law = _RateLaw(net)
        self.X = np.asarray(X, float)
        self.t = np.asarray(t, float)
        if np.any(self.t <= 0):
            raise ValueError("training times must be positive")
        Y = np.asarray(Y, float)
        obs = np.ones(net.n_species, bool) if observed is None else np.asarray(observed, bool)
        self.mask = (obs[None, :] & np.isfinite(Y)).astype(float)
        self.Y = np.where(self.mask > 0, Y, 0.0)
        self.scale = np.asarray(scale, float)
        n = net.n_species
        self.rowfac = np.ones(n)
        self.rowfac[net.gas_index] = 1.0 / voidage
        Gf = np.zeros((len(self.t), n))
        Gf[:, net.gas_index] = np.asarray(G, float) / voidage
        # constant part of the model residual, already in scaled units
        self.flux_term = Gf / self.scale
        self.inv_t = 1.0 / self.t[:, None]
        self.has_uptake = U is not None and uptake_matrix is not None
        if self.has_uptake:
            self.U = np.asarray(U, float) / uptake_scale
            self.Erows = np.asarray(uptake_matrix, float) / uptake_scale
        self.M_scaled = (self.rowfac[:, None] * net.stoich) / self.scale[:, None]

    def residuals(self, params: KinnParameters):
        """Data, model and uptake residual arrays (scaled units)."""
        layers = unpack(params.weights, self.layer_sizes)
        N, dN, _ = _forward(layers, self.X)
        return self._residuals(N, dN, params.k)

    def _residuals(self, N, dN, k):
        c = N * self.scale
        psi = self.law.psi(c)
        eps_c = (N - self.Y) * self.mask
        eps_m = dN * self.inv_t - self.flux_term - (psi * k) @ self.M_scaled.T
        eps_u = c @ self.Erows.T - self.U if self.has_uptake else None
        return eps_c, eps_m, eps_u, c, psi

    def loss(self, params, alpha, beta=0.0):
        eps_c, eps_m, eps_u, _, _ = self.residuals(params)
        jd = float(np.sum(eps_c ** 2))
        jm = float(np.sum(eps_m ** 2))
        ju = float(np.sum(eps_u ** 2)) if eps_u is not None else 0.0
        return jd + alpha * jm + beta * ju, jd, jm, ju

    def loss_and_grad(self, params, alpha, beta=0.0):
        """Return ``((J, jd, jm, ju), grad_weights, grad_kinetic_raw)``."""
        layers = unpack(params.weights, self.layer_sizes)
        N, dN, cache = _forward(layers, self.X)
        k = params.k
        eps_c, eps_m, eps_u, c, psi = self._residuals(N, dN, k)
        jd = float(np.sum(eps_c ** 2))
        jm = float(np.sum(eps_m ** 2))
        ju = float(np.sum(eps_u ** 2)) if eps_u is not None else 0.0
        J = jd + alpha * jm + beta * ju

        gN = 2.0 * eps_c
        gdN = (2.0 * alpha) * eps_m * self.inv_t
        # A_j = sum_i eps_m,i * Msr_ij ; eps_m depends on -k_j psi_j Msr_ij
        A = eps_m @ self.M_scaled
        gk = -(2.0 * alpha) * np.sum(A * psi, axis=0)
        Ak = A * k
        gc = np.zeros_like(c)
        for j, parts in enumerate(self.law.dpsi(c)):
            for i, d in parts:
                gc[:, i] -= (2.0 * alpha) * Ak[:, j] * d
        if eps_u is not None and beta != 0.0:
            gc += (2.0 * beta) * eps_u @ self.Erows
        gN += gc * self.scale
        gw = _backward(layers, cache, gN, gdN, self.layer_sizes)
        graw = gk * np.sign(params.kinetic_raw)
        return (J, jd, jm, ju), gw, graw


@dataclass
class Stage:
    alpha: float
    beta: float = 0.0
    epochs: int = 5
    step_size: float | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.epochs < 0:
            raise ValueError("alpha, beta and epochs must be nonnegative")


def annealing_schedule(alpha_start=1e-10, alpha_end=1.0, epochs_per_stage=5, beta_end=0.0,
                       factor=10.0, final_epochs=0):
    """alpha grows by ``factor`` every stage from start to end.

    ``beta`` follows the same geometric ramp ending at ``beta_end`` (zero keeps
    it off). ``final_epochs`` appends extra epochs at the final weights.
    """
    n = int(round(np.log(alpha_end / alpha_start) / np.log(factor))) + 1
    alphas = alpha_start * factor ** np.arange(n)
    alphas[-1] = alpha_end
    if beta_end > 0:
        betas = beta_end / factor ** np.arange(n)[::-1]
    else:
        betas = np.zeros(n)
    stages = [Stage(float(a), float(b), epochs_per_stage) for a, b in zip(alphas, betas)]
    if final_epochs:
        stages.append(Stage(float(alphas[-1]), float(betas[-1]), final_epochs))
    return stages


@dataclass
class TrainingSchedule:
    stages: list = field(default_factory=annealing_schedule)
    iterations_per_epoch: int = 1000
    step_size: float = 1e-3
    init_scale_weights: float = 1e-2
    init_scale_kinetic: float = 1e-5
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(*s) for s in self.stages]
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


class Adam:
    def __init__(self, n, step_size=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, (self.b1, self.b2), self.eps = step_size, betas, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainingHistory:
    """Loss components logged at the end of every epoch."""

    stage: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    J: list = field(default_factory=list)
    j_data: list = field(default_factory=list)
    j_model: list = field(default_factory=list)
    j_uptake: list = field(default_factory=list)
    k: list = field(default_factory=list)

    def as_array(self):
        return np.column_stack([self.stage, self.epoch, self.alpha, self.beta, self.J,
                                self.j_data, self.j_model, self.j_uptake])


def train_kinn(objective: KinnObjective, schedule: TrainingSchedule, params=None):
    """Full-batch Adam over the staged alpha/beta schedule.

    Returns the final parameters, the per-epoch history and the wall time.
    """
    n_k = objective.net.n_reactions
    if params is None:
        params = KinnParameters.initialize(objective.layer_sizes, n_k, schedule.init_scale_weights,
                                           schedule.init_scale_kinetic, schedule.seed)
    params = params.copy()
    nw = params.n_weights
    x = np.concatenate([params.weights, params.kinetic_raw])
    opt = Adam(x.size, schedule.step_size, schedule.adam_betas, schedule.adam_eps)
    hist = TrainingHistory()
    t0 = time.perf_counter()
    epoch = 0
    for si, stage in enumerate(schedule.stages):
        opt.lr = stage.step_size or schedule.step_size
        for _ in range(stage.epochs):
            for it in range(schedule.iterations_per_epoch):
                params.weights, params.kinetic_raw = x[:nw], x[nw:]
                (J, jd, jm, ju), gw, gk = objective.loss_and_grad(params, stage.alpha, stage.beta)
                if not np.isfinite(J):
                    raise TrainingDivergence(
                        f"non-finite loss at stage {si} (alpha={stage.alpha:g}), "
                        f"epoch {epoch}, iteration {it}")
                x = opt.step(x, np.concatenate([gw, gk]))
            params.weights, params.kinetic_raw = x[:nw].copy(), x[nw:].copy()
            J, jd, jm, ju = objective.loss(params, stage.alpha, stage.beta)
            for name, v in (("stage", si), ("epoch", epoch), ("alpha", stage.alpha),
                            ("beta", stage.beta), ("J", J), ("j_data", jd), ("j_model", jm),
                            ("j_uptake", ju)):
                getattr(hist, name).append(v)
            hist.k.append(params.k.copy())
            logger.info("stage %d epoch %d alpha=%.1e J=%.4e data=%.4e model=%.4e uptake=%.4e",
                        si, epoch, stage.alpha, J, jd, jm, ju)
            epoch += 1
    params.weights, params.kinetic_raw = x[:nw].copy(), x[nw:].copy()
    return params, hist, time.perf_counter() - t0
