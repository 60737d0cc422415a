"""Workflow stages: simulate, preprocess, fit, evaluate, baseline, compare.

Each stage writes into its own subdirectory of the run directory together with
a manifest; downstream stages check that manifest against the current
configuration before using anything.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .baseline import DerivativeMatchingBaseline, reconstruct_adspecies
from .config import (build_network, build_pulse, build_reactor, build_stages, section_hash_input,
                     smoothing_of)
from .data import NoiseSpec, build_dataset
from .estimator import KINNRegressor, fit_metrics, load_params, objective_for, rate_parity, save_params
from .evaluation import (energy_scale_mae, log_ratio_error, parameter_std, parity_metrics,
                         rebuild_ode)
from .kinn import mlp_forward
from .reactor import simulate_pulse_train

logger = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "fit", "evaluate", "baseline")


def _hash(cfg, stage):
    return io.config_hash(section_hash_input(cfg, stage))


def _context(cfg, net, k_true):
    ctx = {"network": cfg["network"].get("preset", "inline"),
           "mode": cfg["dataset"]["mode"],
           "noise_level": repr(float(cfg["dataset"]["noise_level"])),
           "noise_seed": cfg["dataset"]["noise_seed"]}
    if k_true is not None:
        for name, v in zip(net.reaction_names, k_true):
            ctx[f"k_true[{name}]"] = f"{v:.10g}"
    return ctx


# -- simulate ---------------------------------------------------------------------------

def simulate(cfg, out):
    net, k_true = build_network(cfg)
    if k_true is None:
        raise ValueError("network.k: simulation needs rate constants")
    reactor = build_reactor(cfg)
    records = simulate_pulse_train(reactor, net, k_true, build_pulse(cfg), cfg["pulse"]["n_pulses"])
    d = io.ensure_dir(Path(out) / "simulate")
    files = io.write_pulse_csvs(records, net, d)
    io.write_manifest(d, "simulate", _hash(cfg, "simulate"), {}, net.names, files,
                      {"n_pulses": len(records)})
    return records


def load_records(cfg, out):
    net, _ = build_network(cfg)
    d = Path(out) / "simulate"
    man = io.read_manifest(d, "simulate", _hash(cfg, "simulate"), net.names)
    return io.read_pulse_csvs(d, net, range(man["n_pulses"]))


# -- preprocess -------------------------------------------------------------------------

def _dataset_from_records(cfg, records):
    net, _ = build_network(cfg)
    sec = cfg["dataset"]
    return build_dataset(
        records, net, build_reactor(cfg), mode=sec["mode"],
        noise=NoiseSpec(float(sec["noise_level"]), int(sec["noise_seed"])),
        n_points=int(sec["n_points"]), split_time=sec["split_time"],
        split_fraction=sec["split_fraction"], train_pulses=sec.get("train_pulses"),
        test_pulses=sec.get("test_pulses"), use_moments=sec.get("use_moments"),
        site_balance=sec.get("site_balance"),
        flux_smoothing=smoothing_of(cfg, "dataset", "flux_smoothing"),
        flux_noise=sec.get("flux_noise", "net"))


def preprocess(cfg, out):
    ds = _dataset_from_records(cfg, load_records(cfg, out))
    d = io.ensure_dir(Path(out) / "dataset")
    files = io.write_dataset_csvs(ds, d)
    io.write_manifest(d, "preprocess", _hash(cfg, "preprocess"),
                      {"noise_seed": cfg["dataset"]["noise_seed"]}, ds.species, files,
                      {"mode": ds.mode, "train_pulses": list(ds.train_pulses),
                       "test_pulses": list(ds.test_pulses)})
    return ds


def load_dataset(cfg, out):
    """Check the dataset manifest, then rebuild the dataset from the simulator CSVs.

    Preprocessing is deterministic, so the rebuilt dataset is identical to
    the one whose CSVs were written.
    """
    net, _ = build_network(cfg)
    io.read_manifest(Path(out) / "dataset", "preprocess", _hash(cfg, "preprocess"), net.names)
    return _dataset_from_records(cfg, load_records(cfg, out))


# -- fit --------------------------------------------------------------------------------

def make_regressor(cfg, net):
    k = cfg["kinn"]
    return KINNRegressor(net, hidden=tuple(k["hidden"]), stages=build_stages(cfg),
                         iterations_per_epoch=int(k["iterations_per_epoch"]),
                         step_size=float(k["step_size"]),
                         init_scale_weights=float(k["init_scale_weights"]),
                         init_scale_kinetic=float(k["init_scale_kinetic"]),
                         seed=int(k["seed"]), n_restarts=int(k["n_restarts"]))


def fit(cfg, out, dataset=None):
    net, k_true = build_network(cfg)
    ds = dataset if dataset is not None else load_dataset(cfg, out)
    est = make_regressor(cfg, net).fit(ds)
    d = io.ensure_dir(Path(out) / "fit")
    # wall time varies between runs; keep it out of the diff-able report
    body = "\n".join(l for l in est.report_.to_text().splitlines()
                     if not l.startswith("wall_time")) + "\n"
    io.write_report(d / "fit_report.txt", _context(cfg, net, k_true), body)
    save_params(d / "params.txt", est.params_, net, ds.scaling)
    h = est.history_
    rows = [[s, e, a, b, J, jd, jm, ju] + list(k) for s, e, a, b, J, jd, jm, ju, k in
            zip(h.stage, h.epoch, h.alpha, h.beta, h.J, h.j_data, h.j_model, h.j_uptake, h.k)]
    io.write_csv(d / "history.csv", ["stage", "epoch", "alpha", "beta", "J", "j_data", "j_model",
                                     "j_uptake"] + [f"k_{n}" for n in net.reaction_names], rows)
    io.write_manifest(d, "fit", _hash(cfg, "fit"), {"kinn_seed": est.report_.seed},
                      net.names, ["fit_report.txt", "params.txt", "history.csv"],
                      {"wall_time_s": round(est.report_.wall_time, 3)})
    return est


# -- evaluate ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    species: list
    train_per_species: dict
    test_per_species: dict
    train_metrics: dict
    test_metrics: dict
    mean_abs_log_ratio: float
    energy_mae_ev: float
    temperature: float
    excluded: list
    rebuild_gap: dict
    uncertainty: object = None
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"temperature_K = {self.temperature:g}",
                 f"mean_abs_log_ratio = {self.mean_abs_log_ratio:.10g}",
                 f"energy_mae_eV = {self.energy_mae_ev:.10g}",
                 f"log_ratio_excluded = {','.join(self.excluded) or 'none'}"]
        for tag, met in (("train", self.train_metrics), ("test", self.test_metrics)):
            for key, v in met.items():
                lines.append(f"{tag}_{key} = {v:.10g}")
        for tag, per in (("train", self.train_per_species), ("test", self.test_per_species)):
            for sp, (mae, r2) in per.items():
                lines.append(f"{tag}_mae[{sp}] = {mae:.10g}")
                lines.append(f"{tag}_r2[{sp}] = {r2:.10g}")
        for key, v in self.rebuild_gap.items():
            lines.append(f"rebuild_gap[{key}] = {v:.10g}")
        u = self.uncertainty
        if u is not None:
            lines.append(f"sigma_label = {u.label}")
            lines.append(f"hessian_condition = {u.condition_number:.6g}")
            lines.append(f"hessian_regularized = {u.regularized}")
            for name, s, rs in zip(self.extra.get("reaction_names", ()), u.sigma, u.relative_sigma):
                lines.append(f"sigma[{name}] = {s:.6g} ; relative {rs:.6g}")
        return "\n".join(lines) + "\n"


def _per_species(obj, params, names):
    N = mlp_forward(params, obj.X)
    out = {}
    for i, sp in enumerate(names):
        keep = obj.mask[:, i] > 0
        if keep.sum() >= 2:
            out[sp] = parity_metrics(N[keep, i], obj.Y[keep, i])
    return out


def rebuild_pulses(ds, net, k, pulses=None):
    """ODE rebuild of every pulse from the dataset's net-flux terms and initial state."""
    out = {}
    for p in ds.pulses:
        if pulses is not None and p.pulse_index not in pulses:
            continue
        c0 = np.nan_to_num(p.conc_full[0].copy())
        if not ds.observed.all():
            ads = reconstruct_adspecies(p.uptake_full[:1], ds.uptake_matrix, net)[0]
            c0[net.surface_index] = ads
        c0[net.gas_index] = np.clip(c0[net.gas_index], 0.0, None)
        out[p.pulse_index] = rebuild_ode(k, net, p.times_full, p.net_flux_full, c0, ds.voidage)
    return out


def evaluate_fit(params, ds, net, k_true=None, temperature=800.0, uncertainty=True,
                 alpha=None, beta=0.0, rel_step=1e-4):
    obj_train = objective_for(ds, net, params.layer_sizes, "train")
    train = fit_metrics(obj_train, params)
    test, test_per = {}, {}
    if ds.test_pulses:
        obj_test = objective_for(ds, net, params.layer_sizes, "test")
        test = fit_metrics(obj_test, params)
        test_per = _per_species(obj_test, params, net.names)
    excluded, mean_ln, energy = [], float("nan"), float("nan")
    if k_true is not None:
        excluded = [n for n, v in zip(net.reaction_names, k_true) if v <= 0]
        keep = np.asarray(k_true) > 0
        mean_ln = log_ratio_error(params.k, k_true)
        if np.all(params.k[keep] > 0):
            energy, _ = energy_scale_mae(params.k[keep], np.asarray(k_true)[keep], temperature)
    gaps = {}
    fits = rebuild_pulses(ds, net, params.k)
    for pid, c in fits.items():
        data = ds.pulse(pid).conc_full
        for a in net.gas_index:
            peak = np.nanmax(data[:, a])
            gaps[f"{pid}:{net.names[a]}"] = float(np.nanmax(np.abs(c[:, a] - data[:, a])) / peak)
    unc = None
    if uncertainty:
        a = alpha if alpha is not None else 1.0
        unc = parameter_std(obj_train, params, a, beta, rel_step)
    return EvaluationReport(
        species=net.names, train_per_species=_per_species(obj_train, params, net.names),
        test_per_species=test_per, train_metrics=train, test_metrics=test,
        mean_abs_log_ratio=mean_ln, energy_mae_ev=energy, temperature=temperature,
        excluded=excluded, rebuild_gap=gaps, uncertainty=unc,
        extra={"reaction_names": net.reaction_names, "rebuilt": fits})


def evaluate(cfg, out):
    net, k_true = build_network(cfg)
    ds = load_dataset(cfg, out)
    fit_dir = Path(out) / "fit"
    io.read_manifest(fit_dir, "fit", _hash(cfg, "fit"), net.names)
    params, header = load_params(fit_dir / "params.txt")
    if header["species"] != net.names:
        raise io.MissingArtifact("params.txt species order does not match the network")
    last = build_stages(cfg)[-1]
    ev = cfg["evaluation"]
    rep = evaluate_fit(params, ds, net, k_true, float(ev["temperature"]),
                       bool(ev.get("uncertainty", True)), last.alpha, last.beta,
                       float(ev.get("rel_step", 1e-4)))
    d = io.ensure_dir(Path(out) / "evaluate")
    io.write_report(d / "evaluation_report.txt", _context(cfg, net, k_true), rep.to_text())
    rows = []
    for which, ids in (("train", ds.train_pulses), ("test", ds.test_pulses)):
        if not ids:
            continue
        obj = objective_for(ds, net, params.layer_sizes, which)
        N = mlp_forward(params, obj.X)
        derived, law = rate_parity(obj, params)
        pulse_ids = ds.stack(which)["pulse"]
        Y = np.where(obj.mask > 0, obj.Y, np.nan)
        for r in range(len(obj.t)):
            for i, sp in enumerate(net.names):
                rows.append([which, int(pulse_ids[r]), obj.t[r], sp, Y[r, i], N[r, i],
                             derived[r, i], law[r, i]])
    io.write_csv(d / "parity.csv", ["set", "pulse", "t", "species", "target_scaled",
                                    "predicted_scaled", "dcdt_network_scaled",
                                    "rate_law_scaled"], rows)
    rows = []
    fits = rep.extra["rebuilt"]
    for pid in sorted(fits):
        p = ds.pulse(pid)
        for r in range(len(p.times_full)):
            rows.append([pid, p.times_full[r]] + list(p.conc_full[r]) + list(fits[pid][r]))
    io.write_csv(d / "rebuild.csv", ["pulse", "t"] + [f"data_{s}" for s in net.names]
                 + [f"rebuilt_{s}" for s in net.names], rows)
    io.write_manifest(d, "evaluate", _hash(cfg, "evaluate"), {}, net.names,
                      ["evaluation_report.txt", "parity.csv", "rebuild.csv"])
    return rep


# -- baseline ---------------------------------------------------------------------------

def baseline(cfg, out, dataset=None):
    net, k_true = build_network(cfg)
    ds = dataset if dataset is not None else load_dataset(cfg, out)
    est = DerivativeMatchingBaseline(net, smoothing_of(cfg)).fit(ds)
    d = io.ensure_dir(Path(out) / "baseline")
    io.write_report(d / "baseline_report.txt", _context(cfg, net, k_true),
                    est.report())
    io.write_manifest(d, "baseline", _hash(cfg, "baseline"), {}, net.names,
                      ["baseline_report.txt"])
    return est


# -- compare ----------------------------------------------------------------------------

_K_LINE = re.compile(r"^k\[(.+)\]$")


def parse_fit_report(path):
    """Context, fitted k and convergence flags of a fit or baseline report."""
    kv = io.read_report(path)
    names, k, conv, k_true = [], [], [], {}
    for key, value in kv.items():
        m = _K_LINE.match(key)
        if m:
            parts = [s.strip() for s in value.split(";")]
            names.append(m.group(1))
            k.append(float(parts[0]))
            conv.append(not any(s.startswith("unconverged") for s in parts[1:]))
        elif key.startswith("k_true["):
            k_true[key[7:-1]] = float(value)
    if not names:
        raise ValueError(f"{path}: no rate constants found")
    truth = np.array([k_true[n] for n in names]) if len(k_true) == len(names) else None
    return {"path": str(path), "method": kv.get("method", "?"), "network": kv.get("network"),
            "noise_level": float(kv.get("noise_level", "nan")),
            "smoothing": kv.get("smoothing", ""), "names": names, "k": np.array(k),
            "converged": np.array(conv), "k_true": truth}


def compare_runs(report_paths, out_csv=None, out_txt=None):
    """Side-by-side table of k, ln-ratio errors and flags across reports.

    ``delta_ln`` columns compare every row against the first report.
    """
    if len(report_paths) < 2:
        raise ValueError("compare needs at least two reports")
    reps = [parse_fit_report(p) for p in report_paths]
    nets = {r["network"] for r in reps}
    if len(nets) != 1:
        raise ValueError(f"reports use different networks: {sorted(map(str, nets))}")
    names = reps[0]["names"]
    if any(r["names"] != names for r in reps):
        raise ValueError("reports list different reactions")
    ref = reps[0]["k"]
    header = (["report", "method", "smoothing", "noise_level"] + [f"k_{n}" for n in names]
              + [f"ln_err_{n}" for n in names] + [f"flag_{n}" for n in names]
              + [f"delta_ln_{n}" for n in names] + ["mean_abs_ln_err", "n_unconverged"])
    rows = []
    for r in reps:
        with np.errstate(divide="ignore", invalid="ignore"):
            ln_err = (np.log(r["k"] / r["k_true"]) if r["k_true"] is not None
                      else np.full(len(names), np.nan))
            delta = np.log(r["k"] / ref)
        delta = np.where(r["k"] == ref, 0.0, delta)
        mean_ln = float(np.mean(np.abs(ln_err))) if np.all(np.isfinite(ln_err)) else float("nan")
        rows.append([r["path"], r["method"], r["smoothing"] or "-", r["noise_level"]]
                    + list(r["k"]) + list(ln_err)
                    + ["ok" if c else "unconverged" for c in r["converged"]]
                    + list(delta) + [mean_ln, int((~r["converged"]).sum())])
    if out_csv:
        io.write_csv(out_csv, header, rows)
    lines = []
    width = max(len(Path(r["path"]).parent.name or r["path"]) for r in reps)
    head = f"{'run':<{width}}  {'method':<8} {'noise':>5}  " + " ".join(f"{n:>11}" for n in names)
    lines.append(head + "  mean|ln|")
    for r, row in zip(reps, rows):
        cells = []
        for j in range(len(names)):
            txt = f"{r['k'][j]:.4g}" + ("" if r["converged"][j] else "!")
            cells.append(f"{txt:>11}")
        label = Path(r["path"]).parent.name or r["path"]
        lines.append(f"{label:<{width}}  {r['method']:<8} {r['noise_level']:>5.2g}  "
                     + " ".join(cells) + f"  {row[-2]:.3f}")
    lines.append("'!' marks a parameter flagged unconverged")
    text = "\n".join(lines) + "\n"
    if out_txt:
        Path(out_txt).write_text(text)
    return header, rows, text


# -- chained runs -----------------------------------------------------------------------

def run_stages(cfg, out, stages=STAGES):
    """Run the requested stages in workflow order; returns per-stage results."""
    bad = set(stages) - set(STAGES)
    if bad:
        raise ValueError(f"unknown stages {sorted(bad)}")
    results = {}
    for st in STAGES:
        if st in stages:
            logger.info("stage %s -> %s", st, out)
            results[st] = {"simulate": simulate, "preprocess": preprocess, "fit": fit,
                           "evaluate": evaluate, "baseline": baseline}[st](cfg, out)
    return results


def run_sweep(cfg, out, stages=STAGES, smoothing_variants=None):
    """Noise sweep: one isolated run directory per level, then a comparison table.

    The simulation is shared; every level re-preprocesses with its own noise.
    The baseline runs once per smoothing variant (default: none and the
    configured Savitzky-Golay window).
    """
    import copy

    levels = cfg["sweep"]["noise_levels"]
    out = Path(out)
    if "simulate" in stages:
        simulate(cfg, out)
    variants = smoothing_variants or ["none", cfg["baseline"].get("smoothing", "none")]
    variants = list(dict.fromkeys(v if isinstance(v, str) else tuple(v) for v in variants))
    reports = []
    for lv in levels:
        sub = copy.deepcopy(cfg)
        sub["dataset"]["noise_level"] = float(lv)
        d = io.ensure_dir(out / f"noise_{lv:g}")
        # share the simulation: link its directory into the level's run
        sim = d / "simulate"
        if not sim.exists():
            sim.symlink_to((out / "simulate").resolve(), target_is_directory=True)
        for st in ("preprocess", "fit", "evaluate"):
            if st in stages:
                {"preprocess": preprocess, "fit": fit, "evaluate": evaluate}[st](sub, d)
        reports.append(d / "fit" / "fit_report.txt")
        for v in variants:
            vc = copy.deepcopy(sub)
            vc["baseline"]["smoothing"] = v if isinstance(v, str) else list(v)
            tag = "none" if v == "none" else f"sg{v[0]}_{v[1]}"
            vd = io.ensure_dir(d / f"baseline_{tag}")
            if "baseline" in stages:
                ds = load_dataset(vc, d)
                baseline(vc, vd, dataset=ds)
            reports.append(vd / "baseline" / "baseline_report.txt")
    return compare_runs(reports, out / "comparison.csv", out / "comparison.txt")
