"""Experiment configuration, orchestration and verification suites.

An experiment is a JSON document describing the graph, the vertex families,
the correlators to estimate and the optional oracle run.  ``run_experiment``
writes every result into one directory together with a manifest; the output
is a deterministic function of the config and the code version.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import importlib.metadata
import io
import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from .correlators import (
    CorrelatorSpec,
    distribution_report,
    estimate_correlators,
    estimate_mean_s,
    mean_s_analytic,
    sample_phases,
)
from .graph import GraphSpec, build_graph, mean_level_density
from .propagator import (
    ScatteringSystem,
    classical_map_gap,
    decay_ratio,
    evaluate_s,
    make_system,
    spectral_radius,
    trajectory_sum,
)
from .theory import ericson_pq, goe_calibrate, goe_correlators
from .vertex import build_kirchhoff_vertex

log = logging.getLogger(__name__)

SUITES = ("unitarity", "mean-s", "two-point", "ericson", "gap", "trajectories")


class ConfigError(ValueError):
    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_ENTRY = {
    "type": "array",
    "prefixItems": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        {"type": "number"},
    ],
    "minItems": 2,
    "maxItems": 2,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["name", "graph"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "graph": {
            "type": "object",
            "required": ["num_vertices", "num_leads"],
            "additionalProperties": False,
            "properties": {
                "num_vertices": {"type": "integer", "minimum": 2},
                "num_leads": {"type": "integer", "minimum": 1},
                "length_range": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "vertices": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lead_family": {"enum": ["canonical", "kirchhoff"]},
                "interior_family": {"enum": ["designed", "kirchhoff"]},
                "t_coeff": {
                    "oneOf": [
                        {"type": "number", "minimum": 0, "maximum": 1},
                        {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                    ]
                },
                "phi1": {"type": "number"},
                "lead_phases": {"enum": ["binary", "zero"]},
                "spectrum": {"enum": ["binary", "goe"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "correlators": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 2},
                "n_batches": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "specs": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["name", "p"],
                        "additionalProperties": False,
                        "properties": {
                            "name": {"type": "string"},
                            "p": {"type": "array", "items": _ENTRY, "minItems": 1},
                            "q": {"type": "array", "items": _ENTRY},
                        },
                    },
                },
                "sweep": {
                    "type": "object",
                    "required": ["pair", "x_max", "n_points"],
                    "additionalProperties": False,
                    "properties": {
                        "pair": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                        "x_max": {"type": "number", "minimum": 0},
                        "n_points": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "distribution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pairs": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                "n_samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "bins": {"type": "integer", "minimum": 1},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 2},
                "n_draws": {"type": "integer", "minimum": 2},
                "calibration_draws": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "checks": {"type": "array", "items": {"enum": ["swap", "unitarity", "mean-s"]}},
        "output": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    name: str
    graph: dict
    vertices: dict = field(default_factory=dict)
    correlators: dict = field(default_factory=dict)
    distribution: dict | None = None
    oracle: dict | None = None
    checks: list = field(default_factory=list)
    output: str | None = None
    description: str = ""
    source: str = ""

    @classmethod
    def from_dict(cls, data: dict, source: str = "") -> "ExperimentConfig":
        try:
            jsonschema.Draft202012Validator(CONFIG_SCHEMA).validate(data)
        except jsonschema.ValidationError as exc:
            raise ConfigError(exc.message, exc.json_path) from None
        gr = data["graph"]
        if gr["num_leads"] > gr["num_vertices"]:
            raise ConfigError("num_leads exceeds num_vertices", "$.graph.num_leads")
        t = data.get("vertices", {}).get("t_coeff")
        if isinstance(t, list) and len(t) != gr["num_leads"]:
            raise ConfigError("need one t_coeff per lead", "$.vertices.t_coeff")
        return cls(
            name=data["name"],
            graph=dict(gr),
            vertices=dict(data.get("vertices", {})),
            correlators=copy.deepcopy(data.get("correlators", {})),
            distribution=copy.deepcopy(data.get("distribution")),
            oracle=copy.deepcopy(data.get("oracle")),
            checks=list(data.get("checks", [])),
            output=data.get("output"),
            description=data.get("description", ""),
            source=source,
        )

    @classmethod
    def load(cls, ref) -> "ExperimentConfig":
        """Load a config from a path or the name of a bundled config."""
        path = Path(ref)
        if path.is_file():
            text, source = path.read_text(), str(path)
        else:
            name = str(ref)
            res = resources.files("qgraph.configs").joinpath(f"{name}.json")
            if not res.is_file():
                raise ConfigError(f"no config file or bundled config named {name!r}")
            text, source = res.read_text(), f"bundled:{name}"
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data, source)

    def to_dict(self) -> dict:
        out = {"name": self.name, "graph": self.graph, "vertices": self.vertices}
        for key in ("correlators", "distribution", "oracle", "checks", "output", "description"):
            val = getattr(self, key)
            if val:
                out[key] = val
        return out

    def with_overrides(self, seed: int | None = None, samples: int | None = None):
        """Copy with every seed offset by ``seed`` and sample counts replaced by ``samples``.

        ``samples`` replaces the correlator, distribution and oracle draw
        counts; the oracle calibration budget is left alone.
        """
        cfg = copy.deepcopy(self)
        if seed is not None:
            for block in (cfg.graph, cfg.vertices, cfg.correlators, cfg.distribution, cfg.oracle):
                if block is not None:
                    block["seed"] = int(block.get("seed", 0)) + int(seed)
        if samples is not None:
            cfg.correlators["n_samples"] = int(samples)
            if cfg.distribution is not None:
                cfg.distribution["n_samples"] = int(samples)
            if cfg.oracle is not None:
                cfg.oracle["n_draws"] = int(samples)
        return cfg


def bundled_configs() -> list[str]:
    root = resources.files("qgraph.configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def build_from_config(cfg: ExperimentConfig) -> ScatteringSystem:
    gr = cfg.graph
    g = build_graph(
        gr["num_vertices"],
        gr["num_leads"],
        tuple(gr.get("length_range", (1.0, 2.0))),
        seed=gr.get("seed", 0),
    )
    return make_system(g, **cfg.vertices)


def sweep_specs(cfg: ExperimentConfig, d_mean: float, unit: str = "graph") -> tuple:
    """Two-point specs on the grid ``x = 2 pi <d> (kappa + kappa~)``, ``kappa = kappa~``.

    ``unit="graph"`` gives offsets in wave number; ``"spacing"`` gives offsets
    in units of the mean level spacing (GOE side).
    """
    sw = cfg.correlators.get("sweep")
    if not sw:
        return np.zeros(0), []
    xs = np.linspace(0.0, sw["x_max"], sw["n_points"])
    scale = 4.0 * np.pi * (d_mean if unit == "graph" else 1.0)
    pair = tuple(sw["pair"])
    specs = []
    for x in xs:
        k = float(x / scale)
        specs.append((f"sweep x={x:.6g}", [(pair, k)], [(pair, k)]))
    return xs, specs


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        out["qgraph"] = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        out["qgraph"] = "unknown"
    return out


class _Writer:
    def __init__(self, out_dir: Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def text(self, name: str, content: str):
        (self.out / name).write_text(content)
        self.files[name] = hashlib.sha256(content.encode()).hexdigest()


def _system_record(sys: ScatteringSystem) -> dict:
    g = sys.graph
    return {
        "checksum": sys.checksum(),
        "num_vertices": g.num_vertices,
        "num_bonds": g.num_bonds,
        "num_channels": g.num_channels,
        "mean_level_density": mean_level_density(g),
        "transmissions": [float(t) for t in sys.transmissions],
        "rho": [[float(r.real), float(r.imag)] for r in sys.rho_diag],
        "fast_path": sys.has_fast_path,
        "vertices": [{"vertex": vm.vertex, "family": vm.family, "params": vm.params} for vm in sys.vertices],
    }


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def run_experiment(
    config,
    out_dir=None,
    workers: int | None = None,
    seed: int | None = None,
    samples: int | None = None,
) -> Path:
    """Run every stage of an experiment and write the artifact directory.

    Parameters
    ----------
    config : ExperimentConfig, path or bundled config name
    out_dir : path, optional
        Defaults to ``config.output`` or ``runs/<name>``.
    workers : int, optional
        Worker processes; results do not depend on it.
    seed, samples : int, optional
        Overrides applied with :meth:`ExperimentConfig.with_overrides`.

    Returns
    -------
    Path of the artifact directory.  ``manifest.json`` has ``status``
    ``"complete"`` or ``"partial"``; on a mid-run failure the exception is
    re-raised after the manifest is written.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    cfg = cfg.with_overrides(seed, samples)
    out = Path(out_dir or cfg.output or Path("runs") / cfg.name)
    w = _Writer(out)
    manifest = {
        "name": cfg.name,
        "source": cfg.source,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "overrides": {"seed": seed, "samples": samples},
        "stages": [],
        "status": "partial",
    }
    report: dict = {"name": cfg.name, "comparisons": [], "checks": []}
    try:
        sys = build_from_config(cfg)
        g = sys.graph
        d_mean = mean_level_density(g)
        w.text("config.json", _dump_json(cfg.to_dict()))
        w.text("graph.json", g.to_json() + "\n")
        w.text("system.json", _dump_json(_system_record(sys)))
        manifest["stages"].append("system")

        for check in cfg.checks:
            report["checks"].append(_run_check(check, sys, cfg))
        if cfg.checks:
            manifest["stages"].append("checks")

        cc = cfg.correlators
        specs, names, goe_specs = [], [], []
        xs, sweep = sweep_specs(cfg, d_mean)
        base = dict(
            n_samples=cc.get("n_samples", 2000),
            seed=cc.get("seed", 0),
            n_batches=cc.get("n_batches", 50),
        )
        for item in cc.get("specs", []):
            specs.append(
                CorrelatorSpec(
                    entries_p=[(tuple(p), k) for p, k in item["p"]],
                    entries_q=[(tuple(p), k) for p, k in item.get("q", [])],
                    name=item["name"],
                    **base,
                )
            )
        for name, p, q in sweep:
            specs.append(CorrelatorSpec(entries_p=p, entries_q=q, name=name, **base))
        if specs:
            ests = estimate_correlators(sys, specs, workers=workers)
            recs = [e.to_record(sp) for e, sp in zip(ests, specs)]
            w.text("correlators.json", _dump_json(recs))
            w.text(
                "correlators.csv",
                _csv_text(
                    ["name", "p", "q", "mean_re", "mean_im", "stderr", "n", "rejects"],
                    [
                        [
                            sp.name,
                            json.dumps(sp.to_dict()["p"]),
                            json.dumps(sp.to_dict()["q"]),
                            e.mean.real,
                            e.mean.imag,
                            e.stderr,
                            e.n_effective,
                            e.rejected_samples,
                        ]
                        for sp, e in zip(specs, ests)
                    ],
                ),
            )
            manifest["stages"].append("correlators")

            t = sys.transmissions
            s_means = np.diag(mean_s_analytic(sys))
            preds = [ericson_pq(sp.entries_p, sp.entries_q, t, d_mean, s_means) for sp in specs]
            w.text(
                "predictions.csv",
                _csv_text(
                    ["name", "channels", "offsets", "value_re", "value_im"],
                    [
                        [
                            sp.name,
                            json.dumps([list(p) for p, _ in sp.entries_p + sp.entries_q]),
                            json.dumps([k for _, k in sp.entries_p + sp.entries_q]),
                            v.real,
                            v.imag,
                        ]
                        for sp, v in zip(specs, preds)
                    ],
                ),
            )
            manifest["stages"].append("predictions")

            goe = None
            if cfg.oracle is not None and len(xs):
                goe = _run_oracle(cfg, sys, w, workers)
                manifest["stages"].append("oracle")
            for i, (sp, e, pred) in enumerate(zip(specs, ests, preds)):
                comp = {
                    "name": sp.name,
                    "mc_re": e.mean.real,
                    "mc_im": e.mean.imag,
                    "mc_stderr_re": e.stderr_re,
                    "mc_stderr_im": e.stderr_im,
                    "prediction_re": pred.real,
                    "prediction_im": pred.imag,
                    "z_prediction": e.z_score(pred),
                }
                j = i - (len(specs) - len(sweep))
                if j >= 0:
                    comp["x"] = float(xs[j])
                    if goe is not None:
                        ge = goe[j]
                        comp.update(
                            goe_re=ge.mean.real,
                            goe_im=ge.mean.imag,
                            goe_stderr_re=ge.stderr_re,
                            goe_stderr_im=ge.stderr_im,
                            z_goe=e.z_score(ge.mean, complex(ge.stderr_re, ge.stderr_im)),
                        )
                report["comparisons"].append(comp)
            if len(xs):
                rows = [
                    [xs[j] / (4.0 * np.pi * d_mean), ests[len(specs) - len(sweep) + j].mean.real,
                     ests[len(specs) - len(sweep) + j].mean.imag,
                     ests[len(specs) - len(sweep) + j].stderr]
                    for j in range(len(xs))
                ]
                w.text("sweep.csv", _csv_text(["kappa", "re", "im", "stderr"], rows))

        if cfg.distribution is not None:
            dist = cfg.distribution
            pairs = [tuple(p) for p in dist.get("pairs", [[0, 1]])]
            rep = distribution_report(
                sys,
                pairs,
                dist.get("n_samples", 2000),
                seed=dist.get("seed", 0),
                bins=dist.get("bins", 40),
                workers=workers,
            )
            w.text("distribution.json", _dump_json(rep.to_record() | {"pairs": [list(p) for p in pairs]}))
            w.text("histogram.csv", rep.histogram_csv())
            report["distribution"] = {"ratio": rep.ratio, "ratio_stderr": rep.ratio_stderr}
            manifest["stages"].append("distribution")

        report["passed"] = all(c["passed"] for c in report["checks"])
        w.text("report.json", _dump_json(report))
        manifest["status"] = "complete"
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["files"] = dict(sorted(w.files.items()))
        (out / "manifest.json").write_text(_dump_json(manifest))
    return out


def _run_oracle(cfg, sys, w: _Writer, workers):
    oc = cfg.oracle
    lam = sys.num_channels
    dim = oc.get("dim", max(400, 50 * lam))
    seed = oc.get("seed", 0)
    model = goe_calibrate(
        sys.transmissions,
        dim,
        seed=seed,
        n_draws=oc.get("calibration_draws", 10_000),
        workers=workers,
    )
    w.text("oracle_calibration.json", _dump_json(model.to_dict()))
    _, sweep = sweep_specs(cfg, 1.0, unit="spacing")
    n_draws = oc.get("n_draws", 2000)
    specs = [
        CorrelatorSpec(entries_p=p, entries_q=q, name=name, n_samples=n_draws, seed=seed + 1)
        for name, p, q in sweep
    ]
    ests = goe_correlators(model, specs, workers=workers)
    w.text("oracle.json", _dump_json([e.to_record(sp) for e, sp in zip(ests, specs)]))
    return ests


def _run_check(check: str, sys: ScatteringSystem, cfg: ExperimentConfig) -> dict:
    g = sys.graph
    seed = cfg.correlators.get("seed", 0)
    if check == "swap":
        # single perfectly transmitting bond: S must be the swap matrix times exp(i theta)
        phases = sample_phases(g, seed, stream=0)
        s = evaluate_s(sys, phases, 0.0).s
        expected = np.exp(1j * phases[0]) * np.array([[0, 1], [1, 0]])
        err = float(np.max(np.abs(s - expected))) if s.shape == (2, 2) else float("inf")
        return {"check": "swap", "max_error": err, "passed": err < 1e-12}
    if check == "unitarity":
        worst_u, worst_s = 0.0, 0.0
        for i in range(10):
            s = evaluate_s(sys, sample_phases(g, seed, stream=i), 0.0).s
            worst_u = max(worst_u, float(np.max(np.abs(s.conj().T @ s - np.eye(s.shape[0])))))
            worst_s = max(worst_s, float(np.max(np.abs(s - s.T))))
        return {
            "check": "unitarity",
            "unitarity": worst_u,
            "symmetry": worst_s,
            "passed": worst_u < 1e-9 and worst_s < 1e-12,
        }
    if check == "mean-s":
        mean, se_re, se_im = estimate_mean_s(sys, cfg.correlators.get("n_samples", 2000), seed=seed)
        ref = mean_s_analytic(sys)
        z = _max_z(mean - ref, se_re, se_im)
        return {"check": "mean-s", "max_z": z, "passed": z < 4.0}
    raise ConfigError(f"unknown check {check!r}", "$.checks")


def _max_z(diff, se_re, se_im) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        zr = np.where(se_re > 0, np.abs(diff.real) / se_re, np.where(diff.real == 0, 0.0, np.inf))
        zi = np.where(se_im > 0, np.abs(diff.imag) / se_im, np.where(diff.imag == 0, 0.0, np.inf))
    return float(max(np.max(zr), np.max(zi)))


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    suite: str
    passed: bool
    lines: list

    def text(self) -> str:
        head = f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}"
        return "\n".join([head] + ["  " + ln for ln in self.lines])


def verify(suite: str, seed: int = 0, samples: int | None = None, workers=None) -> VerifyReport:
    """Run one invariant battery.

    Raises
    ------
    ValueError
        For an unknown suite name.
    """
    funcs = {
        "unitarity": _verify_unitarity,
        "mean-s": _verify_mean_s,
        "two-point": _verify_two_point,
        "ericson": _verify_ericson,
        "gap": _verify_gap,
        "trajectories": _verify_trajectories,
    }
    if suite not in funcs:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    passed, lines = funcs[suite](seed, samples, workers)
    return VerifyReport(suite, bool(passed), lines)


def random_system(rng: np.random.Generator, v_max: int = 12, lam_max: int = 10) -> ScatteringSystem:
    """Random system for property checks: size, leads, families and T all drawn from ``rng``."""
    v = int(rng.integers(2, v_max + 1))
    lam = int(rng.integers(1, min(v, lam_max) + 1))
    g = build_graph(v, lam, (1.0, 2.0), seed=int(rng.integers(2**31)))
    kirchhoff = bool(rng.integers(2))
    if kirchhoff:
        return make_system(g, lead_family="kirchhoff", interior_family="kirchhoff")
    return make_system(
        g,
        t_coeff=rng.uniform(0.05, 1.0, lam),
        phi1=float(rng.uniform(0, 2 * np.pi)),
        spectrum=str(rng.choice(["binary", "goe"])),
        seed=int(rng.integers(2**31)),
    )


def _verify_unitarity(seed, samples, workers):
    rng = np.random.default_rng(seed)
    n_sys = samples or 100
    worst_u = worst_s = 0.0
    for _ in range(n_sys):
        sys = random_system(rng, v_max=30)
        for _ in range(10):
            ph = rng.uniform(0, 2 * np.pi, sys.graph.num_bonds)
            s = evaluate_s(sys, ph, 0.0).s
            worst_u = max(worst_u, float(np.max(np.abs(s.conj().T @ s - np.eye(s.shape[0])))))
            worst_s = max(worst_s, float(np.max(np.abs(s - s.T))))
    ok = worst_u < 1e-9 and worst_s < 1e-12
    return ok, [f"{n_sys} systems x 10 samples", f"max |S^+S - 1| = {worst_u:.3e}", f"max |S - S^T| = {worst_s:.3e}"]


def _verify_mean_s(seed, samples, workers):
    g = build_graph(8, 3, seed=seed)
    sys = make_system(g, t_coeff=[0.3, 0.64, 1.0], seed=seed)
    mean, se_re, se_im = estimate_mean_s(sys, samples or 20_000, seed=seed, workers=workers)
    z = _max_z(mean - mean_s_analytic(sys), se_re, se_im)
    lines = [f"rho = {np.round(sys.rho_diag.real, 4).tolist()}", f"MC diagonal = {np.round(np.diag(mean), 4).tolist()}", f"max |z| = {z:.2f}"]
    return z < 4.0, lines


def _verify_two_point(seed, samples, workers):
    g = build_graph(12, 2, seed=seed)
    sys = make_system(g, t_coeff=0.5, seed=seed)
    d = mean_level_density(g)
    xs = np.array([0.0, 2.0, 5.0])
    n = samples or 20_000
    specs = [CorrelatorSpec([((0, 1), x / (4 * np.pi * d))], [((0, 1), x / (4 * np.pi * d))], n_samples=n, seed=seed) for x in xs]
    ge = estimate_correlators(sys, specs, workers=workers)
    model = goe_calibrate(sys.transmissions, 200, seed=seed, n_draws=4000, workers=workers)
    gs = [CorrelatorSpec([((0, 1), x / (4 * np.pi))], [((0, 1), x / (4 * np.pi))], n_samples=max(n // 5, 50), seed=seed + 1) for x in xs]
    oe = goe_correlators(model, gs, workers=workers)
    lines, ok = [], True
    for x, a, b in zip(xs, ge, oe):
        z = a.z_score(b.mean, complex(b.stderr_re, b.stderr_im))
        ok &= z < 3.0
        lines.append(f"x={x:4.1f} graph {a.mean.real:+.5f} goe {b.mean.real:+.5f} z={z:.2f}")
    return ok, lines


def _verify_ericson(seed, samples, workers, rel_tol: float = 0.15):
    g = build_graph(16, 10, seed=seed)
    sys = make_system(g, t_coeff=1.0, seed=seed)
    d = mean_level_density(g)
    t = sys.transmissions
    n = samples or 2000
    specs = [
        CorrelatorSpec([((0, 1), 0.0)], [((0, 1), 0.0)], n_samples=n, seed=seed, name="(1,1) off-diagonal"),
        CorrelatorSpec([((0, 0), 0.0)], [((0, 0), 0.0)], n_samples=n, seed=seed, name="(1,1) diagonal"),
        CorrelatorSpec([((0, 1), 0.0), ((2, 3), 0.0)], [((0, 1), 0.0), ((2, 3), 0.0)], n_samples=n, seed=seed, name="(2,2)"),
    ]
    ests = estimate_correlators(sys, specs, workers=workers)
    ok, lines = True, []
    for sp, e in zip(specs, ests):
        pred = ericson_pq(sp.entries_p, sp.entries_q, t, d, np.zeros(len(t)))
        rel = abs(e.mean - pred) / abs(pred)
        ok &= rel < rel_tol
        lines.append(f"{sp.name}: MC {e.mean.real:.5f} +- {e.stderr_re:.5f}, closed form {pred.real:.5f}, rel. dev. {rel:.3f}")
    return ok, lines


def _verify_gap(seed, samples, workers):
    tri = triangle_kirchhoff()
    _, gap_tri = classical_map_gap(tri)
    g20 = build_graph(20, 0, seed=seed)
    _, gap20 = classical_map_gap(make_system(g20, interior_family="kirchhoff"))
    ok = abs(gap_tri) < 1e-12 and gap20 > 0.05
    return ok, [f"triangle gap = {gap_tri:.3e}", f"complete V=20 gap = {gap20:.4f}"]


def _verify_trajectories(seed, samples, workers):
    g = build_graph(5, 2, seed=seed)
    sys = make_system(g, t_coeff=[0.7, 0.9], seed=seed)
    ph = sample_phases(g, seed)
    r = spectral_radius(sys, ph)
    res = trajectory_sum(sys, ph, 0.0, n_max=terms_for_residual(r, 1e-12))
    below = res.residuals < 1e-11
    n_stop = int(np.argmax(below)) if np.any(below) else len(res.residuals)
    ratio = decay_ratio(res.residuals, n_stop // 2, n_stop)
    ok = abs(ratio - r) < 0.05 and res.residual < 1e-8
    return ok, [
        f"spectral radius {r:.4f}",
        f"fitted decay ratio {ratio:.4f}",
        f"final residual {res.residual:.2e} after {len(res.residuals) - 1} terms",
    ]


def terms_for_residual(radius: float, target: float, margin: int = 200, cap: int = 200_000) -> int:
    """Number of trajectory terms for ``radius**n`` to fall below ``target``."""
    if radius >= 1.0:
        return cap
    return int(min(cap, np.ceil(np.log(target) / np.log(radius)) + margin))


def triangle_kirchhoff() -> ScatteringSystem:
    """Closed triangle with valency-2 Kirchhoff vertices (pure transmission)."""
    from .propagator import assemble_system

    g = GraphSpec(3, [(1, 0), (2, 0), (2, 1)], [1.0, 1.3, 1.7], leads=())
    return assemble_system(g, [build_kirchhoff_vertex(2, False, vertex=v) for v in range(3)])
