"""Command-line entry point: ``qgraph <subcommand> [options]``.

Exit codes: 0 success, 1 failed check or run, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import runner
from .correlators import sample_phases
from .graph import mean_level_density
from .propagator import SolveError, classical_map_gap, dump_system, evaluate_s, spectral_radius
from .theory import CalibrationError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="config path or bundled config name")
    p.add_argument("--seed", type=int, default=None, help="offset added to every seed in the config")
    p.add_argument("--samples", type=int, default=None, help="override Monte Carlo sample counts")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $QGRAPH_WORKERS or 1)")
    p.add_argument("--out", default=None, help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgraph", description="Chaotic scattering on open quantum graphs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build the graph and system, write graph.json and system.json")
    _common(p)
    p = sub.add_parser("smatrix", help="S-matrix at one phase draw")
    _common(p)
    p.add_argument("--offset", type=float, default=0.0, help="wave-number offset kappa")
    p.add_argument("--dump", action="store_true", help="also write the binary Sigma/T dump")
    p = sub.add_parser("correlate", help="estimate the configured correlators")
    _common(p)
    p = sub.add_parser("predict", help="closed-form predictions for the configured correlators")
    _common(p)
    p = sub.add_parser("oracle", help="calibrate the GOE oracle and estimate its two-point sweep")
    _common(p)
    p = sub.add_parser("diagnose", help="spectral radius, classical-map gap and unitarity deficit")
    _common(p)
    p = sub.add_parser("verify", help="run an invariant battery")
    p.add_argument("suite", choices=runner.SUITES)
    _common(p, config_required=False)
    p = sub.add_parser("run", help="full experiment into an artifact directory")
    _common(p)
    sub.add_parser("configs", help="list bundled configs")
    return ap


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.output or Path("runs") / cfg.name)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(path)


def _stage_config(cfg, keep: set):
    """Copy of ``cfg`` with only the stages in ``keep``."""
    c = cfg.with_overrides()
    if "oracle" not in keep:
        c.oracle = None
    if "distribution" not in keep:
        c.distribution = None
    c.checks = []
    return c


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolveError, CalibrationError, RuntimeError, ArithmeticError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def _dispatch(args) -> int:
    if args.command == "configs":
        for name in runner.bundled_configs():
            print(name)
        return EXIT_OK
    if args.command == "verify":
        rep = runner.verify(args.suite, seed=args.seed or 0, samples=args.samples, workers=args.workers)
        print(rep.text())
        return EXIT_OK if rep.passed else EXIT_FAIL

    cfg = runner.ExperimentConfig.load(args.config).with_overrides(args.seed, args.samples)
    if args.command == "run":
        out = runner.run_experiment(cfg, _out_dir(args, cfg), workers=args.workers)
        report = json.loads((out / "report.json").read_text())
        for comp in report["comparisons"]:
            line = f"{comp['name']:<24} MC {comp['mc_re']:+.5f}{comp['mc_im']:+.5f}i  closed form {comp['prediction_re']:+.5f}  z={comp['z_prediction']:.2f}"
            if "z_goe" in comp:
                line += f"  GOE {comp['goe_re']:+.5f} z={comp['z_goe']:.2f}"
            print(line)
        for chk in report["checks"]:
            print(f"check {chk['check']}: {'pass' if chk['passed'] else 'FAIL'}")
        print(out)
        return EXIT_OK if report["passed"] else EXIT_FAIL

    sysm = runner.build_from_config(cfg)
    g = sysm.graph
    out = _out_dir(args, cfg)
    if args.command == "generate":
        _write(out / "graph.json", g.to_json() + "\n")
        _write(out / "system.json", runner._dump_json(runner._system_record(sysm)))
        return EXIT_OK
    if args.command == "smatrix":
        seed = cfg.correlators.get("seed", 0)
        phases = sample_phases(g, seed)
        smp = evaluate_s(sysm, phases, args.offset)
        rec = {
            "offset": args.offset,
            "phases": phases.tolist(),
            "rcond": smp.rcond,
            "s_re": smp.s.real.tolist(),
            "s_im": smp.s.imag.tolist(),
        }
        _write(out / "smatrix.json", runner._dump_json(rec))
        if args.dump:
            for p in dump_system(sysm, out / "system"):
                print(p)
        return EXIT_OK
    if args.command == "predict":
        return _predict_only(cfg, out)
    if args.command in ("correlate", "oracle"):
        keep = {"correlate": {"correlators", "distribution"}, "oracle": {"correlators", "oracle"}}[args.command]
        c = _stage_config(cfg, keep)
        run_out = runner.run_experiment(c, out, workers=args.workers)
        print(run_out)
        return EXIT_OK
    if args.command == "diagnose":
        seed = cfg.correlators.get("seed", 0)
        mods, gap = classical_map_gap(sysm)
        deficit = np.sort(np.linalg.eigvalsh(sysm.sigma_b @ sysm.sigma_b.conj().T))
        rec = {
            "checksum": sysm.checksum(),
            "mean_level_density": mean_level_density(g),
            "classical_map_moduli": mods.tolist(),
            "gap": gap,
            "spectral_radius": spectral_radius(sysm, sample_phases(g, seed)),
            "sigma_sigma_dagger_low": deficit[: max(g.num_channels, 1)].tolist(),
            "transmissions": sysm.transmissions.tolist(),
        }
        _write(out / "diagnose.json", runner._dump_json(rec))
        print(f"gap {gap:.6f}  spectral radius {rec['spectral_radius']:.6f}")
        return EXIT_OK
    raise AssertionError(args.command)


def _predict_only(cfg, out: Path) -> int:
    from .correlators import CorrelatorSpec, mean_s_analytic
    from .theory import ericson_pq

    sysm = runner.build_from_config(cfg)
    d = mean_level_density(sysm.graph)
    t = sysm.transmissions
    s_means = np.diag(mean_s_analytic(sysm))
    rows = []
    items = [(it["name"], it["p"], it.get("q", [])) for it in cfg.correlators.get("specs", [])]
    _, sweep = runner.sweep_specs(cfg, d)
    items += [(name, [[list(p), k] for p, k in pe], [[list(p), k] for p, k in qe]) for name, pe, qe in sweep]
    for name, p, q in items:
        sp = CorrelatorSpec([(tuple(a), k) for a, k in p], [(tuple(a), k) for a, k in q], n_samples=2, n_batches=2)
        v = ericson_pq(sp.entries_p, sp.entries_q, t, d, s_means)
        rows.append([name, json.dumps([list(a) for a, _ in sp.entries_p + sp.entries_q]), json.dumps([k for _, k in sp.entries_p + sp.entries_q]), v.real, v.imag])
    _write(out / "predictions.csv", runner._csv_text(["name", "channels", "offsets", "value_re", "value_im"], rows))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
