"""Run configuration: TOML files, named presets and field-level validation."""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import tomli

from .kinn import Stage, annealing_schedule
from .network import PRESETS, Species, get_preset, network_from_steps, validate_network
from .reactor import PulseSpec, ReactorConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


DEFAULTS = {
    "name": "custom",
    "reactor": {},
    "network": {"preset": "co-oxidation"},
    "pulse": {"intensities": [1.0, 1.0, 0.0], "n_pulses": 1},
    "dataset": {"mode": "ideal", "noise_level": 0.0, "noise_seed": 0, "n_points": 200,
                "split_time": 0.5, "split_fraction": 0.5, "flux_smoothing": "none",
                "flux_noise": "net"},
    "kinn": {"hidden": [8], "schedule": {"alpha_start": 1e-10, "alpha_end": 1e-4,
                                         "epochs_per_stage": 5, "final_epochs": 10},
             "iterations_per_epoch": 1000, "step_size": 1e-3, "init_scale_weights": 1e-2,
             "init_scale_kinetic": 1e-5, "seed": 0, "n_restarts": 1},
    "evaluation": {"temperature": 800.0, "uncertainty": True, "rel_step": 1e-4},
    "baseline": {"smoothing": "none"},
}

PRESET_CONFIGS = {
    "single-ideal": {
        "name": "single-ideal",
        "pulse": {"n_pulses": 1},
        "kinn": {"hidden": [8], "n_restarts": 8,
                 "schedule": {"alpha_end": 1e-4, "final_epochs": 10}},
    },
    "multi-ideal": {
        "name": "multi-ideal",
        "pulse": {"n_pulses": 10},
        "dataset": {"train_pulses": [0, 1, 2, 5, 8], "test_pulses": [3, 4, 6, 7, 9]},
        "kinn": {"hidden": [16, 16], "n_restarts": 1,
                 "schedule": {"alpha_end": 1e-4, "final_epochs": 10}},
    },
    "multi-practical": {
        "name": "multi-practical",
        "pulse": {"n_pulses": 10},
        "dataset": {"mode": "practical", "noise_level": 0.5,
                    "train_pulses": [0, 1, 2, 5, 8], "test_pulses": [3, 4, 6, 7, 9]},
        "kinn": {"hidden": [10, 10], "n_restarts": 1,
                 "schedule": {"alpha_end": 1e-3, "beta_end": 1.0, "final_epochs": 0}},
        "baseline": {"smoothing": [11, 3]},
    },
    "noise-sweep": {
        "name": "noise-sweep",
        "pulse": {"n_pulses": 10},
        "dataset": {"train_pulses": [0, 1, 2, 5, 8], "test_pulses": [3, 4, 6, 7, 9]},
        "kinn": {"hidden": [16, 16], "n_restarts": 1,
                 "schedule": {"alpha_end": 1e-4, "final_epochs": 10}},
        "baseline": {"smoothing": [11, 3]},
        "sweep": {"noise_levels": [0.5, 1.0, 2.0]},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(source=None, seed=None):
    """Resolve a config from a TOML path, a preset name or a dict, then validate.

    A file may start from a preset via a top-level ``preset = "<name>"`` key.
    ``seed`` overrides both the KINN seed and the noise seed.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = copy.deepcopy(source)
    elif str(source) in PRESET_CONFIGS and not Path(source).exists():
        raw = {"preset": str(source)}
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config: no such file or preset {str(source)!r} "
                              f"(presets: {', '.join(sorted(PRESET_CONFIGS))})")
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config: {path}: {exc}") from None
    base = DEFAULTS
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESET_CONFIGS:
            raise ConfigError(f"preset: unknown preset {preset!r}")
        base = _merge(DEFAULTS, PRESET_CONFIGS[preset])
    cfg = _merge(base, raw)
    if seed is not None:
        cfg["kinn"]["seed"] = int(seed)
        cfg["dataset"]["noise_seed"] = int(seed)
    validate_config(cfg)
    return cfg


def _need(cond, field, msg):
    if not cond:
        raise ConfigError(f"{field}: {msg}")


def build_network(cfg):
    """``(network, true_k or None)`` from the ``[network]`` section."""
    sec = cfg["network"]
    if "species" in sec or "steps" in sec:
        try:
            species = [Species(s["name"], s["phase"], s.get("molar_mass"),
                               s.get("elements", {}), int(s.get("sites", 0)))
                       for s in sec["species"]]
            net = network_from_steps(species, sec["steps"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"network: invalid inline definition ({exc})") from None
        problems = validate_network(net)
        _need(not problems, "network", "; ".join(problems))
        k = sec.get("k")
        if k is not None:
            k = np.asarray(k, float)
            _need(k.shape == (net.n_reactions,), "network.k",
                  f"need {net.n_reactions} rate constants")
        return net, k
    name = sec.get("preset")
    _need(name in PRESETS, "network.preset", f"unknown preset {name!r}")
    net, k = get_preset(name)
    if "k" in sec:
        k = np.asarray(sec["k"], float)
        _need(k.shape == (net.n_reactions,), "network.k", f"need {net.n_reactions} values")
    return net, k


def build_reactor(cfg):
    try:
        return ReactorConfig(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in cfg["reactor"].items()})
    except TypeError as exc:
        raise ConfigError(f"reactor: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"reactor: {exc}") from None


def build_pulse(cfg):
    sec = cfg["pulse"]
    return PulseSpec(tuple(sec["intensities"]), sec.get("injection_width"))


def build_stages(cfg):
    sec = cfg["kinn"]
    if "stages" in sec:
        try:
            return [Stage(*map(float, s[:2]), int(s[2])) for s in sec["stages"]]
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"kinn.stages: expected [alpha, beta, epochs] rows ({exc})") from None
    sch = dict(sec["schedule"])
    try:
        return annealing_schedule(**sch)
    except TypeError as exc:
        raise ConfigError(f"kinn.schedule: {exc}") from None


def smoothing_of(cfg, section="baseline", key="smoothing"):
    sm = cfg[section].get(key, "none")
    return None if sm in (None, "none") else tuple(int(v) for v in sm)


def validate_config(cfg):
    unknown = set(cfg) - set(DEFAULTS) - {"sweep"}
    _need(not unknown, "config", f"unknown sections {sorted(unknown)}")
    net, _ = build_network(cfg)
    build_reactor(cfg)
    pulse = cfg["pulse"]
    _need(len(pulse["intensities"]) == net.n_gas, "pulse.intensities",
          f"need one intensity per gas species ({net.n_gas})")
    _need(all(v >= 0 for v in pulse["intensities"]), "pulse.intensities", "must be >= 0")
    n_pulses = pulse["n_pulses"]
    _need(isinstance(n_pulses, int) and n_pulses >= 1, "pulse.n_pulses", "must be an integer >= 1")
    ds = cfg["dataset"]
    _need(ds["mode"] in ("ideal", "practical"), "dataset.mode", "must be 'ideal' or 'practical'")
    _need(ds["noise_level"] >= 0, "dataset.noise_level", "must be >= 0")
    _need(ds.get("flux_noise", "net") in ("net", "boundary"), "dataset.flux_noise",
          "must be 'net' or 'boundary'")
    _need(int(ds["n_points"]) >= 4, "dataset.n_points", "must be >= 4")
    train = ds.get("train_pulses")
    test = ds.get("test_pulses")
    for field, ids in (("dataset.train_pulses", train), ("dataset.test_pulses", test)):
        if ids is not None:
            _need(all(isinstance(i, int) and 0 <= i < n_pulses for i in ids), field,
                  f"pulse indices must lie in [0, {n_pulses})")
    if train is not None:
        _need(len(train) > 0, "dataset.train_pulses", "must not be empty")
    if train is not None and test is not None:
        overlap = sorted(set(train) & set(test))
        _need(not overlap, "dataset.test_pulses", f"overlaps train_pulses at {overlap}")
    kinn = cfg["kinn"]
    _need(all(int(h) >= 1 for h in kinn["hidden"]), "kinn.hidden", "widths must be >= 1")
    _need(kinn["step_size"] > 0, "kinn.step_size", "must be positive")
    _need(int(kinn["iterations_per_epoch"]) >= 1, "kinn.iterations_per_epoch", "must be >= 1")
    _need(int(kinn["n_restarts"]) >= 1, "kinn.n_restarts", "must be >= 1")
    try:
        build_stages(cfg)
    except ValueError as exc:
        raise ConfigError(f"kinn.schedule: {exc}") from None
    _need(cfg["evaluation"]["temperature"] > 0, "evaluation.temperature", "must be positive")
    for section, key in (("baseline", "smoothing"), ("dataset", "flux_smoothing")):
        sm = cfg[section].get(key, "none")
        if sm not in (None, "none"):
            _need(isinstance(sm, (list, tuple)) and len(sm) == 2
                  and int(sm[0]) > int(sm[1]) >= 1 and int(sm[0]) % 2 == 1,
                  f"{section}.{key}",
                  "expected 'none' or [window, poly_order] with odd window > order >= 1")
    if "sweep" in cfg:
        lv = cfg["sweep"].get("noise_levels", [])
        _need(len(lv) >= 1 and all(v >= 0 for v in lv), "sweep.noise_levels",
              "need at least one nonnegative level")
    return cfg


def section_hash_input(cfg, stage):
    """Sections a stage's artifacts depend on (for manifest hashing)."""
    keys = {"simulate": ("reactor", "network", "pulse"),
            "preprocess": ("reactor", "network", "pulse", "dataset"),
            "fit": ("reactor", "network", "pulse", "dataset", "kinn"),
            "baseline": ("reactor", "network", "pulse", "dataset", "baseline"),
            "evaluate": ("reactor", "network", "pulse", "dataset", "kinn", "evaluation")}[stage]
    return {k: cfg[k] for k in keys}
