"""Kinetics-informed neural networks for simulated TAP pulse-response data."""

__version__ = "0.1.0"

from .network import ReactionNetwork, Species, co_oxidation, get_preset  # noqa: E402
from .reactor import PulseSpec, ReactorConfig, simulate_pulse, simulate_pulse_train  # noqa: E402
from .data import NoiseSpec, build_dataset  # noqa: E402
from .estimator import KINNRegressor  # noqa: E402
from .baseline import DerivativeMatchingBaseline  # noqa: E402

__all__ = [
    "ReactionNetwork", "Species", "co_oxidation", "get_preset", "PulseSpec", "ReactorConfig",
    "simulate_pulse", "simulate_pulse_train", "NoiseSpec", "build_dataset", "KINNRegressor",
    "DerivativeMatchingBaseline", "__version__",
]
