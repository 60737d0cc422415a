"""Turn simulated pulse records into training data for the KINN.

Two observation modes are supported:

``ideal``
    every thin-zone concentration (gas and adspecies) and the net flux are
    observed directly.
``practical``
    only noisy gas-phase thin-zone signals and boundary fluxes are observed;
    adspecies are constrained through atomic uptakes integrated from the
    flux difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .network import ReactionNetwork
from .reactor import PulseRecord, ReactorConfig

MODES = ("ideal", "practical")
DEFAULT_TRAIN = (0, 1, 2, 5, 8)
DEFAULT_TEST = (3, 4, 6, 7, 9)


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


def add_noise(signal, level, rng):
    """Additive Gaussian noise with std ``level * std(signal)``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed. A zero level
    returns an unchanged copy without consuming random numbers.
    """
    signal = np.asarray(signal, dtype=float)
    if signal.size == 0:
        raise ValueError("signal is empty")
    if level == 0:
        return signal.copy()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return signal + rng.normal(0.0, level * np.std(signal), size=signal.shape)


def _check_window(n, window, poly_order):
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if poly_order >= window:
        raise ValueError("poly_order must be smaller than window")
    if window > n:
        raise ValueError("window longer than the series")


def savgol_smooth(signal, window, poly_order, deriv=0, delta=1.0):
    """Savitzky-Golay filter; edges use the polynomial of the first/last full window."""
    signal = np.asarray(signal, dtype=float)
    _check_window(signal.shape[0], window, poly_order)
    return savgol_filter(signal, window, poly_order, deriv=deriv, delta=delta, axis=0,
                         mode="interp")


class SavitzkyGolaySmoother(TransformerMixin, BaseEstimator):
    """Column-wise Savitzky-Golay smoothing of uniformly sampled series."""

    def __init__(self, window=11, poly_order=3):
        self.window = window
        self.poly_order = poly_order

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=True)
        _check_window(X.shape[0], self.window, self.poly_order)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        return savgol_smooth(X, self.window, self.poly_order)


def _spread(lo, hi, count):
    """``count`` distinct integers spread evenly over [lo, hi], ending at hi."""
    if count == 0:
        return np.array([], dtype=int)
    if hi - lo + 1 < count:
        raise ValueError(f"segment has {hi - lo + 1} points, {count} requested")
    idx = np.round(np.linspace(hi, lo, count, endpoint=False)[::-1]).astype(int)
    return np.unique(np.clip(idx, lo, hi))


def subsample_times(times, n_points, split_time=0.5, split_fraction=0.5):
    """Indices for a two-density subsample that never includes t <= 0.

    ``ceil(split_fraction * n_points)`` samples fall in (0, split_time], the rest
    in (split_time, t_end].
    """
    times = np.asarray(times, dtype=float)
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if not times[0] <= split_time <= times[-1]:
        raise ValueError("split_time outside the time grid")
    n_early = int(np.ceil(split_fraction * n_points))
    early = np.flatnonzero((times > 0) & (times <= split_time))
    late = np.flatnonzero(times > split_time)
    if len(early) < n_early or len(late) < n_points - n_early:
        raise ValueError("not enough points in a segment for the requested sample")
    idx = np.concatenate([
        early[_spread(0, len(early) - 1, n_early)],
        late[_spread(0, len(late) - 1, n_points - n_early)] if n_points > n_early else [],
    ]).astype(int)
    if len(idx) != n_points:
        raise ValueError("could not place the requested number of distinct samples")
    return idx


def zeroth_moments(record_or_times, flux=None):
    """Trapezoidal time integral of each outlet flux, nmol."""
    if flux is None:
        times, flux = record_or_times.times, record_or_times.outlet_flux
    else:
        times = record_or_times
    return np.trapezoid(np.asarray(flux, float), np.asarray(times, float), axis=0)


def _cumtrapz(y, t):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t)[:, None], axis=0)
    return out


def uptake_series(times, gas_conc, net_flux, composition_gas, voidage, start):
    """Atomic uptake per element along one pulse.

    The surface gains whatever enters the thin zone and is not held up in the
    gas phase: ``U(t) = U(0) + E_gas [int_0^t g dt - e (c(t) - c(0))]`` with
    ``g = (f_in - f_out) / l_cat``.
    """
    flow = _cumtrapz(net_flux, times) - voidage * (gas_conc - gas_conc[0])
    return start + flow @ composition_gas.T


@dataclass
class ScalingInfo:
    """Per-channel scales mapping physical values into roughly [0, 1]."""

    species: np.ndarray
    moments: np.ndarray
    uptake: float

    def scale(self, conc):
        return np.asarray(conc, float) / self.species

    def unscale(self, scaled):
        return np.asarray(scaled, float) * self.species


class ConcentrationScaler(TransformerMixin, BaseEstimator):
    """Divide every column by its maximum over the fitted data.

    ``fixed`` optionally pins the scale of some columns (index -> scale), used
    for adspecies scaled by the maximum atomic uptake.
    """

    def __init__(self, fixed=None):
        self.fixed = fixed

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan")
        scale = np.full(X.shape[1], np.nan)
        seen = np.any(np.isfinite(X), axis=0)
        scale[seen] = np.nanmax(X[:, seen], axis=0)
        for i, v in (self.fixed or {}).items():
            scale[i] = v
        if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ValueError(f"non-positive scale in {scale}")
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return check_array(X, ensure_all_finite="allow-nan") / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self)
        return check_array(X, ensure_all_finite="allow-nan") * self.scale_


@dataclass
class PulseData:
    """One pulse of training data.

    ``*_full`` arrays live on the simulator's full time grid; the remaining
    arrays on the subsampled times. ``targets`` holds scaled concentrations
    with NaN for unobserved channels.
    """

    pulse_index: int
    t: np.ndarray
    targets: np.ndarray
    net_flux: np.ndarray
    uptake: np.ndarray
    moments: np.ndarray
    times_full: np.ndarray
    conc_full: np.ndarray
    net_flux_full: np.ndarray
    uptake_full: np.ndarray
    sample_index: np.ndarray

    @property
    def u(self):
        return np.log(self.t)


@dataclass
class PulseDataset:
    mode: str
    species: list
    elements: list
    observed: np.ndarray
    scaling: ScalingInfo
    pulses: list
    train_pulses: tuple
    test_pulses: tuple
    voidage: float
    catalyst_length: float
    uptake_matrix: np.ndarray
    use_moments: bool = True
    meta: dict = field(default_factory=dict)

    def pulse(self, index):
        for p in self.pulses:
            if p.pulse_index == index:
                return p
        raise KeyError(f"pulse {index} not in dataset")

    def features(self, pulse):
        """NN inputs: log-time and (optionally) scaled zeroth moments."""
        if not self.use_moments:
            return pulse.u[:, None]
        m0 = np.broadcast_to(pulse.moments / self.scaling.moments, (len(pulse.t), len(pulse.moments)))
        return np.column_stack([pulse.u, m0])

    def stack(self, which="train"):
        """Concatenate the arrays of the train or test pulses."""
        ids = self.train_pulses if which == "train" else self.test_pulses
        ps = [self.pulse(i) for i in ids]
        if not ps:
            raise ValueError(f"no {which} pulses")
        return {
            "X": np.vstack([self.features(p) for p in ps]),
            "t": np.concatenate([p.t for p in ps]),
            "Y": np.vstack([p.targets for p in ps]),
            "G": np.vstack([p.net_flux for p in ps]),
            "U": np.vstack([p.uptake for p in ps]),
            "pulse": np.concatenate([np.full(len(p.t), p.pulse_index) for p in ps]),
        }


def build_dataset(records: list[PulseRecord], net: ReactionNetwork, reactor: ReactorConfig,
                  mode="ideal", noise: NoiseSpec | None = None, n_points=200,
                  split_time=0.5, split_fraction=0.5, train_pulses=None, test_pulses=None,
                  use_moments=None, site_balance=None, flux_smoothing=None, flux_noise="net"):
    """Build a :class:`PulseDataset` from a pulse train.

    Noise (if any) is drawn from one generator seeded by ``noise.seed`` in a
    fixed order: pulse, then channel group (thin-zone concentrations, flux
    channels, outlet flow), then species, each draw covering the full time
    series. ``flux_noise="net"`` perturbs the reconstructed net-rate term
    ``(f_in - f_out) / l_cat`` at ``level * std`` of that term;
    ``"boundary"`` perturbs the inlet-face and outlet-face fluxes separately
    (their difference is then dominated by noise).

    In practical mode ``site_balance`` (default on) adds the known total site
    density as an extra uptake row so the free-site level is pinned.

    ``flux_smoothing`` is an optional ``(window, poly_order)`` Savitzky-Golay
    filter applied to the (noisy) boundary fluxes before the net-flux term is
    formed, standing in for the low-pass character of a thin-zone
    reconstruction. Concentrations are left untouched.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if flux_noise not in ("net", "boundary"):
        raise ValueError("flux_noise must be 'net' or 'boundary'")
    noise = noise or NoiseSpec()
    n_rec = len(records)
    if train_pulses is None:
        train_pulses = DEFAULT_TRAIN if n_rec >= 10 else tuple(range(n_rec))
    if test_pulses is None:
        test_pulses = DEFAULT_TEST if n_rec >= 10 else ()
    train_pulses, test_pulses = tuple(train_pulses), tuple(test_pulses)
    if not train_pulses:
        raise ValueError("empty training set")
    if set(train_pulses) & set(test_pulses):
        raise ValueError("train and test pulses overlap")
    known = {r.pulse_index for r in records}
    if not set(train_pulses) | set(test_pulses) <= known:
        raise ValueError("train/test pulse indices not present in the records")
    if use_moments is None:
        use_moments = n_rec > 1
    if site_balance is None:
        site_balance = mode == "practical"

    gi, si = net.gas_index, net.surface_index
    E = net.composition
    e, lcat = reactor.catalyst_voidage, reactor.catalyst_length
    observed = np.ones(net.n_species, bool)
    if mode == "practical":
        observed[si] = False
    uptake_rows = E.copy()
    elements = list(net.elements)
    if site_balance:
        uptake_rows = np.vstack([uptake_rows, net.site_counts])
        elements.append("site")
    rng = np.random.default_rng(noise.seed)

    raw = []
    uptake_start = uptake_rows[:, si] @ records[0].surface_state_initial
    for rec in sorted(records, key=lambda r: r.pulse_index):
        conc = rec.thin_zone_conc.copy()
        f_in, f_out, outlet = rec.boundary_flux_in, rec.boundary_flux_out, rec.outlet_flux
        g = (f_in - f_out) / lcat
        if noise.level > 0:
            lv, n_gas = noise.level, len(gi)
            chans = np.flatnonzero(observed)
            conc[:, chans] = np.column_stack([add_noise(conc[:, i], lv, rng) for i in chans])
            if flux_noise == "net":
                g = np.column_stack([add_noise(g[:, a], lv, rng) for a in range(n_gas)])
            else:
                f_in = np.column_stack([add_noise(f_in[:, a], lv, rng) for a in range(n_gas)])
                f_out = np.column_stack([add_noise(f_out[:, a], lv, rng) for a in range(n_gas)])
                g = (f_in - f_out) / lcat
            outlet = np.column_stack([add_noise(outlet[:, a], lv, rng) for a in range(n_gas)])
        if flux_smoothing is not None:
            g = savgol_smooth(g, *flux_smoothing)
        up = uptake_series(rec.times, conc[:, gi], g, uptake_rows[:, gi], e, uptake_start)
        uptake_start = up[-1].copy()
        if mode == "practical":
            conc[:, si] = np.nan
        raw.append((rec, conc, g, up, zeroth_moments(rec.times, outlet)))

    train_set = set(train_pulses)
    train_conc = np.vstack([c for r, c, *_ in raw if r.pulse_index in train_set])
    train_up = np.vstack([u for r, _, _, u, _ in raw if r.pulse_index in train_set])
    uptake_scale = float(np.max(train_up))
    if uptake_scale <= 0:
        raise ValueError("non-positive uptake scale")
    fixed = {int(i): uptake_scale for i in si} if mode == "practical" else None
    scaler = ConcentrationScaler(fixed=fixed).fit(train_conc)
    m0_train = np.array([m for r, *_, m in raw if r.pulse_index in train_set])
    m0_scale = np.max(np.abs(m0_train), axis=0)
    m0_scale[m0_scale <= 0] = 1.0
    scaling = ScalingInfo(species=scaler.scale_, moments=m0_scale, uptake=uptake_scale)

    pulses = []
    for rec, conc, g, up, m0 in raw:
        idx = subsample_times(rec.times, n_points, split_time, split_fraction)
        scaled = scaler.transform(conc)
        pulses.append(PulseData(
            pulse_index=rec.pulse_index,
            t=rec.times[idx],
            targets=scaled[idx],
            net_flux=g[idx],
            uptake=up[idx],
            moments=m0,
            times_full=rec.times,
            conc_full=conc,
            net_flux_full=g,
            uptake_full=up,
            sample_index=idx,
        ))
    return PulseDataset(
        mode=mode,
        species=net.names,
        elements=elements,
        observed=observed,
        scaling=scaling,
        pulses=pulses,
        train_pulses=train_pulses,
        test_pulses=test_pulses,
        voidage=e,
        catalyst_length=lcat,
        uptake_matrix=uptake_rows,
        use_moments=bool(use_moments),
        meta={"noise_level": noise.level, "noise_seed": noise.seed, "n_points": n_points,
              "flux_smoothing": flux_smoothing, "flux_noise": flux_noise,
              "split_time": split_time, "split_fraction": split_fraction},
    )
