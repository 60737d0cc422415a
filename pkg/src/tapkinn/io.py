"""CSV artifacts, manifests and key-value reports.

Floats are written with ``repr`` so that a CSV round trip is exact and reruns
with the same configuration produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .network import ReactionNetwork
from .reactor import PulseRecord

TOOL_NAME = "tapkinn"
MANIFEST = "manifest.json"

UNITS = {
    "time": "s",
    "concentration": "nmol/cm3",
    "outlet_flux": "nmol/s",
    "face_flux": "nmol/(cm2 s)",
    "net_flux_term": "nmol/(cm3 s)",
    "uptake": "nmol/cm3",
    "moment": "nmol",
}


class MissingArtifact(FileNotFoundError):
    """An upstream artifact is absent or does not match the current configuration."""


def tool_version():
    from . import __version__
    return __version__


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Return ``(header, float array)``; blank cells become NaN."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in body], float)
    return header, data.reshape(len(body), len(header))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(directory, stage, cfg_hash, seeds, species, files, extra=None):
    man = {"tool": TOOL_NAME, "version": tool_version(), "stage": stage,
           "config_hash": cfg_hash, "seeds": seeds, "species": list(species),
           "units": UNITS, "files": sorted(files)}
    man.update(extra or {})
    with open(Path(directory) / MANIFEST, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return man


def read_manifest(directory, stage=None, cfg_hash=None, species=None):
    """Load a stage manifest, refusing it when it does not match expectations."""
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise MissingArtifact(f"missing manifest {path}; run the upstream stage first")
    with open(path) as fh:
        man = json.load(fh)
    if stage is not None and man.get("stage") != stage:
        raise MissingArtifact(f"{path}: expected stage {stage!r}, found {man.get('stage')!r}")
    if cfg_hash is not None and man.get("config_hash") != cfg_hash:
        raise MissingArtifact(f"{path}: artifacts were produced by a different configuration "
                              f"(hash {man.get('config_hash')} != {cfg_hash}); rerun that stage")
    if species is not None and list(man.get("species", [])) != list(species):
        raise MissingArtifact(f"{path}: species order {man.get('species')} does not match")
    for name in man.get("files", []):
        if not (Path(directory) / name).exists():
            raise MissingArtifact(f"{path}: listed file {name} is missing")
    return man


def write_pulse_csvs(records, net: ReactionNetwork, directory):
    """``pulse_<p>_outlet.csv`` and ``pulse_<p>_thinzone.csv`` for every record."""
    directory = Path(directory)
    gas = [net.names[i] for i in net.gas_index]
    files = []
    for rec in records:
        p = rec.pulse_index
        name = f"pulse_{p}_outlet.csv"
        write_csv(directory / name, ["time"] + gas,
                  np.column_stack([rec.times, rec.outlet_flux]))
        files.append(name)
        name = f"pulse_{p}_thinzone.csv"
        header = (["time"] + net.names + [f"f_in_{g}" for g in gas]
                  + [f"f_out_{g}" for g in gas])
        write_csv(directory / name, header,
                  np.column_stack([rec.times, rec.thin_zone_conc, rec.boundary_flux_in,
                                   rec.boundary_flux_out]))
        files.append(name)
    return files


def read_pulse_csvs(directory, net: ReactionNetwork, pulses):
    """Rebuild the :class:`PulseRecord` fields that preprocessing needs."""
    directory = Path(directory)
    n, ng = net.n_species, net.n_gas
    si = net.surface_index
    gas = [net.names[i] for i in net.gas_index]
    records = []
    for p in pulses:
        h_out, out = read_csv(directory / f"pulse_{p}_outlet.csv")
        h_tz, tz = read_csv(directory / f"pulse_{p}_thinzone.csv")
        if h_out != ["time"] + gas or h_tz[1:1 + n] != net.names:
            raise MissingArtifact(f"pulse {p}: CSV columns do not match the network")
        conc = tz[:, 1:1 + n]
        records.append(PulseRecord(
            times=tz[:, 0], outlet_flux=out[:, 1:], thin_zone_conc=conc,
            boundary_flux_in=tz[:, 1 + n:1 + n + ng], boundary_flux_out=tz[:, 1 + n + ng:],
            surface_state_initial=conc[0, si].copy(), surface_state_final=conc[-1, si].copy(),
            escaped=np.zeros((len(tz), ng)), gas_inventory=np.zeros((len(tz), ng)),
            surface_inventory=np.zeros((len(tz), len(si))), intensities=np.full(ng, np.nan),
            pulse_index=int(p)))
    return records


def write_dataset_csvs(ds, directory):
    """``train.csv``, ``test.csv`` and ``scaling.csv`` of a dataset."""
    directory = Path(directory)
    n_gas = ds.pulses[0].net_flux.shape[1]
    gas = ds.species[:n_gas]
    header = (["pulse", "t", "u"] + [f"m0_{g}" for g in gas] + list(ds.species)
              + [f"g_{g}" for g in gas] + [f"U_{e}" for e in ds.elements])
    files = []
    for which, ids in (("train", ds.train_pulses), ("test", ds.test_pulses)):
        rows = []
        for pid in ids:
            p = ds.pulse(pid)
            m0 = np.broadcast_to(p.moments, (len(p.t), len(p.moments)))
            rows.append(np.column_stack([np.full(len(p.t), pid), p.t, p.u, m0, p.targets,
                                         p.net_flux, p.uptake]))
        body = np.vstack(rows) if rows else np.zeros((0, len(header)))
        body = [[int(r[0])] + list(r[1:]) for r in body]
        write_csv(directory / f"{which}.csv", header, body)
        files.append(f"{which}.csv")
    rows = ([("species", s, v) for s, v in zip(ds.species, ds.scaling.species)]
            + [("moment", f"m0_{g}", v) for g, v in zip(gas, ds.scaling.moments)]
            + [("uptake", "uptake", ds.scaling.uptake)])
    write_csv(directory / "scaling.csv", ["kind", "name", "scale"], rows)
    files.append("scaling.csv")
    return files


def write_report(path, context: dict, body: str):
    """Flat ``key = value`` text: context keys first, then the report body."""
    with open(path, "w") as fh:
        for key, value in context.items():
            fh.write(f"{key} = {value}\n")
        fh.write(body)


def read_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing report {path}")
    out = {}
    with open(path) as fh:
        for line in fh:
            key, sep, value = line.partition(" = ")
            if sep:
                out[key.strip()] = value.strip()
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
