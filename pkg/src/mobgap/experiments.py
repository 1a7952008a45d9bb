"""Experiment configuration, runners and report emission.

Configs are YAML documents with a fixed key set (unknown keys are errors).
Reports are CSV with 17 significant digits and a fixed row order, or a JSON
record; both carry a schema version.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .chern import chern_of_hamiltonian
from .lattice import (BlockOperator, ModelError, ModelSpec, SwitchFunction, build_hamiltonian,
                      disorder_values, onsite_operator)
from .localization import CertificateThresholds, fermi_avg_projection_diff, insulator_certificate
from .metric import local_distance
from .spectral import EnergyWindow, SpectralError, diagonalize

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed experiment configuration."""


class FalsificationEvent(RuntimeError):
    """Two certified, metrically close Hamiltonians with different Chern numbers."""


@dataclass(frozen=True)
class PerturbationSpec:
    """``V`` in ``H(t) = H + t V``: i.i.d. on-site values in [-1, 1] or a fixed pattern."""

    kind: str = "random_onsite"
    seed: int = 0
    pattern: tuple[float, ...] = ()


@dataclass(frozen=True)
class LocalizationSpec:
    s: float = 0.3
    eta_min: float = 1e-4
    eta_max: float = 1.0
    n_eta: int = 12
    quad_nodes: int = 64
    n_samples: int = 100
    energy: float = 0.0

    @property
    def eta_grid(self) -> tuple[float, ...]:
        return tuple(np.logspace(math.log10(self.eta_min), math.log10(self.eta_max), self.n_eta).tolist())


@dataclass(frozen=True)
class ScanSpec:
    kind: str = "fermi"
    grid: tuple[float, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    perturbation: PerturbationSpec = PerturbationSpec()
    t_grid: tuple[float, ...] = (0.0,)
    fermi_energy: float = 0.0
    window: tuple[float, float] = (-0.35, 0.35)
    avg_window: tuple[float, float] | None = None
    switch: str = "sharp"
    trace_radius: int | None = None
    thresholds: CertificateThresholds = CertificateThresholds()
    falsification_distance: float = 0.25
    seeds: tuple[int, ...] = ()
    scan: ScanSpec = ScanSpec()
    localization: LocalizationSpec = LocalizationSpec()
    contour_nodes: tuple[int, ...] = (25, 50, 100, 200)
    output: str | None = None
    jobs: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if not self.t_grid or self.t_grid[0] != 0.0 or list(self.t_grid) != sorted(self.t_grid):
            raise ConfigError("t_grid must be sorted and start at 0")
        EnergyWindow(*self.window)
        if self.avg_window is not None:
            EnergyWindow(*self.avg_window)
        SwitchFunction.named(self.switch)
        if self.perturbation.kind not in ("random_onsite", "pattern"):
            raise ConfigError(f"unknown perturbation kind {self.perturbation.kind!r}")
        if self.scan.kind not in ("fermi", "disorder"):
            raise ConfigError(f"unknown scan kind {self.scan.kind!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")

    @property
    def disorder_seeds(self) -> tuple[int, ...]:
        return self.seeds or (self.model.seed,)

    @property
    def energy_window(self) -> EnergyWindow:
        return EnergyWindow(*self.window)

    @property
    def average_window(self) -> EnergyWindow:
        if self.avg_window is not None:
            return EnergyWindow(*self.avg_window)
        w = self.energy_window
        return EnergyWindow(w.a + 0.25 * w.width, w.b - 0.25 * w.width)

    @property
    def switch_function(self) -> SwitchFunction:
        return SwitchFunction.named(self.switch)


# --- parsing ----------------------------------------------------------------

_SECTIONS: dict[str, type] = {
    "perturbation": PerturbationSpec,
    "thresholds": CertificateThresholds,
    "scan": ScanSpec,
    "localization": LocalizationSpec,
}


def _check_type(key: str, value: Any, expected: Any) -> Any:
    """Coerce ``value`` to the annotated type or raise naming ``key``."""
    def bad() -> ConfigError:
        return ConfigError(f"type mismatch for key {key!r}: got {type(value).__name__} ({value!r})")

    text = str(expected)
    if value is None:
        if "None" in text:
            return None
        raise bad()
    if text.startswith("tuple[float, float]"):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise bad()
        return tuple(_check_type(key, v, "float") for v in value)
    if text.startswith("tuple[float"):
        if not isinstance(value, (list, tuple)):
            raise bad()
        return tuple(_check_type(key, v, "float") for v in value)
    if text.startswith("tuple[int"):
        if not isinstance(value, (list, tuple)):
            raise bad()
        return tuple(_check_type(key, v, "int") for v in value)
    if text.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if text.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if text.startswith("str"):
        if not isinstance(value, str):
            raise bad()
        return value
    raise bad()


def _build_section(cls: type, data: Any, prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix!r}: {', '.join(unknown)}")
    kwargs = {k: _check_type(f"{prefix}.{k}", v, known[k].type) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix!r} section: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name: f for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    if "model" not in data:
        raise ConfigError("missing required key 'model'")
    model_data = data["model"]
    if not isinstance(model_data, dict) or "kind" not in model_data:
        raise ConfigError("missing required key 'model.kind'")
    try:
        model = ModelSpec.from_dict(model_data)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    kwargs: dict[str, Any] = {"model": model}
    for key, value in data.items():
        if key == "model":
            continue
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = _check_type(key, value, known[key].type)
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"schema_version": cfg.schema_version, "model": cfg.model.to_dict()}
    for f in fields(cfg):
        if f.name in ("model", "schema_version"):
            continue
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            value = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(value).items()}
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# --- reports ----------------------------------------------------------------

def fmt(value: Any) -> str:
    """Fixed CSV formatting: floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


@dataclass
class Report:
    name: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)

    @property
    def falsified(self) -> bool:
        return bool(self.events)


def emit_report(report: Report, fmt_name: str = "csv") -> str:
    if fmt_name == "csv":
        buf = io.StringIO()
        buf.write(f"# schema: mobgap.{report.name}/{SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([fmt(row.get(c)) for c in report.columns])
        for key in sorted(report.meta):
            buf.write(f"# {key}={_meta_text(report.meta[key])}\n")
        for ev in report.events:
            buf.write(f"# FALSIFICATION {json.dumps(ev, sort_keys=True, default=_json_default)}\n")
        return buf.getvalue()
    if fmt_name == "json":
        record = {"schema": f"mobgap.{report.name}/{SCHEMA_VERSION}", "columns": report.columns,
                  "rows": report.rows, "meta": report.meta, "events": report.events}
        return json.dumps(record, sort_keys=True, indent=1, default=_json_default) + "\n"
    raise ValueError(f"unknown report format {fmt_name!r}")


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _meta_text(value: Any) -> str:
    if isinstance(value, (float, np.floating, int, np.integer, bool)):
        return fmt(value)
    return json.dumps(value, sort_keys=True, default=_json_default)


# --- runners ----------------------------------------------------------------

def run_tasks(fn: Callable, tasks: Sequence, jobs: int) -> list:
    """Map ``fn`` over tasks, in a process pool when ``jobs > 1``; order is preserved."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def perturbation_operator(cfg: ExperimentConfig) -> BlockOperator:
    box, N = cfg.model.box, cfg.model.N
    dim = box.n_sites * N
    p = cfg.perturbation
    if p.kind == "random_onsite":
        values = disorder_values(p.seed, dim, 2.0)
    else:
        if len(p.pattern) != dim:
            raise ConfigError(f"perturbation pattern needs {dim} values, got {len(p.pattern)}")
        values = np.asarray(p.pattern, dtype=float)
        if np.max(np.abs(values)) > 1:
            raise ConfigError("perturbation pattern must satisfy |V_xx| <= 1")
    return onsite_operator(box, N, values)


def hamiltonian_at(cfg: ExperimentConfig, seed: int, t: float) -> BlockOperator:
    H0 = build_hamiltonian(cfg.model.with_(seed=seed))
    if cfg.fermi_energy:
        H0 = H0 - BlockOperator.identity(H0.box, H0.N).scale(cfg.fermi_energy)
    if t == 0.0:
        return H0
    return H0 + perturbation_operator(cfg).scale(t)


CONTINUITY_COLUMNS = ["seed", "t", "d_ell", "cert_pass", "chern_raw", "chern_rounded", "residual",
                      "proj_diff", "status"]


def _continuity_row(args: tuple[ExperimentConfig, int, float]) -> dict[str, Any]:
    cfg, seed, t = args
    H0 = hamiltonian_at(cfg, seed, 0.0)
    H = hamiltonian_at(cfg, seed, t)
    row: dict[str, Any] = {"seed": seed, "t": float(t), "d_ell": local_distance(H0, H).value}
    try:
        dec0, dec = diagonalize(H0), diagonalize(H)
        cert = insulator_certificate(H, cfg.energy_window, cfg.thresholds, dec=dec)
        ch = chern_of_hamiltonian(H, 0.0, cfg.switch_function, cfg.trace_radius, dec=dec)
    except SpectralError as exc:
        row.update(cert_pass=False, chern_raw=math.nan, chern_rounded=None, residual=math.nan,
                   proj_diff=math.nan, status="skipped")
        row["reason"] = str(exc)
        return row
    c = H.box.center * H.N
    row.update(cert_pass=cert.passed, chern_raw=ch.raw, chern_rounded=ch.rounded, residual=ch.residual,
               proj_diff=fermi_avg_projection_diff(dec0, dec, cfg.average_window, c // H.N, c // H.N),
               status=ch.status)
    return row


def run_continuity_experiment(cfg: ExperimentConfig) -> Report:
    """Chern number, certificate and local distance along ``H(t) = H + t V``.

    Rows that are certified and decided are compared pairwise; two of them at
    local distance below ``falsification_distance`` with different rounded
    Chern numbers form a falsification event.
    """
    tasks = [(cfg, seed, float(t)) for seed in cfg.disorder_seeds for t in cfg.t_grid]
    rows = run_tasks(_continuity_row, tasks, cfg.jobs)
    report = Report("continuity", CONTINUITY_COLUMNS, rows)
    good = [r for r in rows if r["status"] == "accepted" and r["cert_pass"]]
    hams = {(r["seed"], r["t"]): hamiltonian_at(cfg, r["seed"], r["t"]) for r in good}
    for i, r1 in enumerate(good):
        for r2 in good[i + 1:]:
            if r1["chern_rounded"] == r2["chern_rounded"]:
                continue
            dist = local_distance(hams[(r1["seed"], r1["t"])], hams[(r2["seed"], r2["t"])]).value
            if dist < cfg.falsification_distance:
                report.events.append({"rows": [[r1["seed"], r1["t"]], [r2["seed"], r2["t"]]],
                                      "d_ell": dist, "chern": [r1["chern_rounded"], r2["chern_rounded"]]})
    largest: dict[str, float] = {}
    for seed in cfg.disorder_seeds:
        seq = [r for r in rows if r["seed"] == seed]
        base = seq[0]["chern_rounded"] if seq and seq[0]["status"] == "accepted" else None
        best = 0.0
        for r in seq:
            if not (r["cert_pass"] and r["status"] == "accepted" and r["chern_rounded"] == base):
                break
            best = r["t"]
        largest[str(seed)] = best
    report.meta.update(
        n_rows=len(rows),
        n_certified=len(good),
        chern_values=sorted({r["chern_rounded"] for r in good}),
        largest_certified_t_unchanged_chern_empirical=largest,
        falsification_distance=cfg.falsification_distance,
    )
    return report


SCAN_COLUMNS = ["seed", "parameter", "chern_raw", "chern_rounded", "residual", "cert_pass", "status"]


def _scan_row(args: tuple[ExperimentConfig, int, float]) -> dict[str, Any]:
    cfg, seed, value = args
    if cfg.scan.kind == "fermi":
        H = hamiltonian_at(cfg, seed, 0.0)
        H = H - BlockOperator.identity(H.box, H.N).scale(value)
    else:
        H = hamiltonian_at(replace(cfg, model=cfg.model.with_(disorder_w=value)), seed, 0.0)
    row: dict[str, Any] = {"seed": seed, "parameter": float(value)}
    try:
        dec = diagonalize(H)
        ch = chern_of_hamiltonian(H, 0.0, cfg.switch_function, cfg.trace_radius, dec=dec)
        cert = insulator_certificate(H, cfg.energy_window, cfg.thresholds, dec=dec)
    except SpectralError as exc:
        row.update(chern_raw=math.nan, chern_rounded=None, residual=math.nan, cert_pass=False,
                   status="skipped", reason=str(exc))
        return row
    row.update(chern_raw=ch.raw, chern_rounded=ch.rounded, residual=ch.residual, cert_pass=cert.passed,
               status=ch.status)
    return row


def run_scan(cfg: ExperimentConfig) -> Report:
    """Fermi-energy or disorder-strength scan.

    For a Fermi-energy scan the rounded Chern number must be constant over
    certified, decided rows of each seed; a change is reported as an event.
    """
    tasks = [(cfg, seed, float(v)) for seed in cfg.disorder_seeds for v in cfg.scan.grid]
    rows = run_tasks(_scan_row, tasks, cfg.jobs)
    report = Report(f"scan_{cfg.scan.kind}", SCAN_COLUMNS, rows)
    spreads = {}
    for seed in cfg.disorder_seeds:
        good = [r for r in rows if r["seed"] == seed and r["cert_pass"] and r["status"] == "accepted"]
        raws = [r["chern_raw"] for r in good]
        spreads[str(seed)] = float(max(raws) - min(raws)) if raws else 0.0
        values = sorted({r["chern_rounded"] for r in good})
        if cfg.scan.kind == "fermi" and len(values) > 1:
            report.events.append({"seed": seed, "chern": values, "kind": "fermi_scan_not_constant"})
    report.meta.update(kind=cfg.scan.kind, raw_spread=spreads)
    return report
