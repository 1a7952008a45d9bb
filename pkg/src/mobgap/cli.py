"""Command line entry point: ``mobgap [global flags] <subcommand> [options]``.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 falsification event.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .chern import bloch_chern_oracle, chern_of_hamiltonian, count_bands_below, fermi_energy_scan
from .experiments import (ConfigError, ExperimentConfig, Report, emit_report, hamiltonian_at,
                          parse_config, run_continuity_experiment, run_scan)
from .lattice import BlockOperator, ModelError, ModelSpec, build_hamiltonian, load_operator, save_operator
from .localization import (FractionalMomentConfig, ensemble_b1_decay, ensemble_fractional_moment,
                           ensemble_second_moment, insulator_certificate, pair_samples, sule_analysis)
from .metric import local_distance, opnorm_bound_from_metric
from .spectral import EnergyWindow, SpectralError, contour_projection, diagonalize, fermi_projection

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FALSIFIED = 0, 2, 3, 4

log = logging.getLogger("mobgap")


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if not args.config:
        raise ConfigError(f"subcommand {args.command!r} needs --config")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    cfg = parse_config(text)
    if args.seed_override is not None:
        cfg = replace(cfg, model=cfg.model.with_(seed=args.seed_override), seeds=())
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def _load_operator_arg(path: str, args: argparse.Namespace) -> BlockOperator:
    p = Path(path)
    if p.suffix == ".npz":
        try:
            return load_operator(p)
        except OSError as exc:
            raise ConfigError(f"cannot read operator: {exc}") from exc
    try:
        data = yaml.safe_load(p.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    if isinstance(data, dict) and "model" in data:
        data = data["model"]
    spec = ModelSpec.from_dict(data)
    if args.seed_override is not None:
        spec = spec.with_(seed=args.seed_override)
    return build_hamiltonian(spec)


def _window(values: list[float] | None, cfg: ExperimentConfig) -> EnergyWindow:
    return EnergyWindow(*values) if values else cfg.energy_window


# --- subcommands ------------------------------------------------------------

def cmd_metric(args: argparse.Namespace) -> Report:
    A = _load_operator_arg(args.a, args)
    B = _load_operator_arg(args.b, args)
    res = local_distance(A, B)
    diff = float(np.linalg.norm(A.matrix - B.matrix, 2)) if A.matrix.size else 0.0
    bound = opnorm_bound_from_metric(res.value, A.box.d) if res.value > 0 else 0.0
    row = {"d_ell": res.value, "mu_star": res.mu_star, "C_star": res.C_star,
           "opnorm_diff": diff, "opnorm_bound": bound}
    return Report("metric", list(row), [row])


def cmd_spectrum(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    H = hamiltonian_at(cfg, cfg.disorder_seeds[0], 0.0)
    if args.dump:
        save_operator(args.dump, H)
    ev = diagonalize(H).eigenvalues
    rows = [{"index": i, "eigenvalue": float(e)} for i, e in enumerate(ev)]
    return Report("spectrum", ["index", "eigenvalue"], rows, {"dim": len(ev)})


def cmd_contour_check(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    H = hamiltonian_at(cfg, cfg.disorder_seeds[0], 0.0)
    lam = args.lam
    exact = fermi_projection(diagonalize(H), lam).matrix
    rows = []
    for npu in cfg.contour_nodes:
        approx = contour_projection(H, lam, npu, method=args.method).matrix
        rows.append({"nodes_per_unit": npu, "max_error": float(np.max(np.abs(approx - exact)))})
    errs = [r["max_error"] for r in rows]
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    return Report("contour_check", ["nodes_per_unit", "max_error"], rows,
                  {"lambda": lam, "method": args.method, "monotone": monotone})


CHERN_COLUMNS = ["seed", "fermi_energy", "switch", "trace_radius", "chern_raw", "chern_rounded",
                 "residual", "status"]


def _chern_row(seed: int, res) -> dict:
    return {"seed": seed, "fermi_energy": res.fermi_energy, "switch": res.switch_id,
            "trace_radius": res.trace_radius, "chern_raw": res.raw, "chern_rounded": res.rounded,
            "residual": res.residual, "status": res.status}


def cmd_chern(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    switch = args.switch or cfg.switch
    cfg = replace(cfg, switch=switch)
    rows = []
    for seed in cfg.disorder_seeds:
        H = hamiltonian_at(cfg, seed, 0.0)
        res = chern_of_hamiltonian(H, args.fermi_energy, cfg.switch_function, cfg.trace_radius)
        rows.append(_chern_row(seed, res))
    meta: dict = {}
    if args.oracle:
        spec = cfg.model
        e = args.fermi_energy + cfg.fermi_energy
        n_filled = count_bands_below(spec.with_(energy_shift=spec.energy_shift + e), 0.0)
        meta["oracle"] = bloch_chern_oracle(spec, n_filled)
        meta["oracle_bands_filled"] = n_filled
    return Report("chern", CHERN_COLUMNS, rows, meta)


def cmd_chern_scan(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    window = _window(args.window, cfg)
    rows, meta = [], {}
    for seed in cfg.disorder_seeds:
        H = hamiltonian_at(cfg, seed, 0.0)
        scan = fermi_energy_scan(H, window, args.n_grid, cfg.switch_function, cfg.trace_radius)
        rows.extend(_chern_row(seed, r) for r in scan.results)
        meta[f"spread.{seed}"] = scan.spread
        meta[f"skipped.{seed}"] = [e for e, _ in scan.skipped]
    return Report("chern_scan", CHERN_COLUMNS, rows, meta)


def cmd_certify(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    window = _window(args.window, cfg)
    rows, meta = [], {}
    for seed in cfg.disorder_seeds:
        cert = insulator_certificate(hamiltonian_at(cfg, seed, 0.0), window, cfg.thresholds)
        for clause, ok in cert.clauses.items():
            rows.append({"seed": seed, "clause": clause, "pass": ok})
        meta[f"{seed}.passed"] = cert.passed
        meta[f"{seed}.degeneracy"] = cert.degeneracy
        meta[f"{seed}.b1_mu"] = cert.b1_fit.rate
        meta[f"{seed}.b1_C"] = cert.b1_fit.C
        meta[f"{seed}.envelope_C"] = cert.meta["envelope_C"]
        if cert.greens_fit is not None:
            meta[f"{seed}.greens_alpha"] = cert.greens_fit.rate
            meta[f"{seed}.greens_D"] = cert.greens_fit.C
    return Report("certify", ["seed", "clause", "pass"], rows, meta)


def cmd_fmm_ensemble(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    loc = cfg.localization
    n = args.n_samples or loc.n_samples
    if args.kind == "fractional":
        fm = FractionalMomentConfig(s=loc.s, eta_grid=loc.eta_grid, quad_nodes=loc.quad_nodes)
        res = ensemble_fractional_moment(cfg.model, loc.energy, fm, n, jobs=cfg.jobs)
    elif args.kind == "second":
        res = ensemble_second_moment(cfg.model, loc.energy, loc.eta_grid, n, jobs=cfg.jobs)
    else:
        res = ensemble_b1_decay(cfg.model, cfg.energy_window, n, jobs=cfg.jobs)
    site, dist, val = pair_samples(res.box, res.mean, res.rows)
    se = res.stderr.ravel()
    ys = np.tile(np.arange(res.box.n_sites), len(res.rows))
    rows = [{"x": int(x), "y": int(y), "distance": int(r), "value": float(v), "stderr": float(s)}
            for x, y, r, v, s in zip(site, ys, dist, val, se)]
    meta = {"kind": args.kind, "n_samples": n, "fit.C": res.fit.C, "fit.mu": res.fit.rate,
            "fit.mu_stderr": res.fit.rate_stderr, "fit.residual": res.fit.residual,
            "fit.significance": res.fit.significance}
    return Report("fmm_ensemble", ["x", "y", "distance", "value", "stderr"], rows, meta)


def cmd_sule(args: argparse.Namespace) -> Report:
    cfg = _load_config(args)
    window = _window(args.window, cfg)
    res = sule_analysis(diagonalize(hamiltonian_at(cfg, cfg.disorder_seeds[0], 0.0)), window)
    rows = [{"index": i, "eigenvalue": float(e), "center": int(c), "rate": float(r)}
            for i, (e, c, r) in enumerate(zip(res.eigenvalues, res.centers, res.rates))]
    meta = {"median_rate": res.median_rate, "center_offset": res.center_offset}
    if res.fit is not None:
        meta.update({"fit.C": res.fit.C, "fit.mu": res.fit.rate})
    return Report("sule", ["index", "eigenvalue", "center", "rate"], rows, meta)


def cmd_continuity(args: argparse.Namespace) -> Report:
    return run_continuity_experiment(_load_config(args))


def cmd_scan(args: argparse.Namespace) -> Report:
    return run_scan(_load_config(args))


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobgap", description="Mobility-gap insulator diagnostics.")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (overrides config)")
    p.add_argument("--seed-override", type=int, default=None, help="replace the model disorder seed")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Callable, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("metric", cmd_metric, "local distance between two operators (.npz or model YAML)")
    sp.add_argument("a")
    sp.add_argument("b")
    sp = add("spectrum", cmd_spectrum, "eigenvalues of the configured Hamiltonian")
    sp.add_argument("--dump", help="also save the Hamiltonian as .npz")
    sp = add("contour-check", cmd_contour_check, "contour projection against the eigen-projection")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--method", choices=("spectral", "solve"), default="spectral")
    sp = add("chern", cmd_chern, "real-space Chern number")
    sp.add_argument("--fermi-energy", type=float, default=0.0)
    sp.add_argument("--switch", choices=("sharp", "tanh"))
    sp.add_argument("--oracle", action="store_true", help="also compute the Bloch-band oracle")
    sp = add("chern-scan", cmd_chern_scan, "Chern number over a Fermi-energy grid")
    sp.add_argument("--window", type=float, nargs=2)
    sp.add_argument("--n-grid", type=int, default=11)
    sp = add("certify", cmd_certify, "finite-volume insulator certificate")
    sp.add_argument("--window", type=float, nargs=2)
    sp = add("fmm-ensemble", cmd_fmm_ensemble, "disorder-averaged Green's function decay")
    sp.add_argument("--kind", choices=("fractional", "second", "b1"), default="fractional")
    sp.add_argument("--n-samples", type=int)
    sp = add("sule", cmd_sule, "eigenvector localization centres and rates")
    sp.add_argument("--window", type=float, nargs=2)
    add("continuity", cmd_continuity, "Chern number along H + tV")
    add("scan", cmd_scan, "Fermi-energy or disorder scan")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if report.falsified:
        print(f"FALSIFICATION: {len(report.events)} event(s)", file=sys.stderr)
        return EXIT_FALSIFIED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
