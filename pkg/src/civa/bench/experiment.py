"""Seeded multi-run sweeps over the number of datasets (K) or references (M)."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..constraints import LAGRANGIAN_VARIANTS, VARIANTS, ConstraintSettings, RegularizerSettings
from ..core import random_init
from ..errors import ConfigError
from ..hybrid import HybridConfig, generate_hybrid
from ..io import write_stack
from ..iva_g import SolverSettings
from ..metrics import cross_joint_isi, joint_isi_from, match_components, similarity_factor
from ..report import RunReport
from ..solver import make_problem, solve

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SUMMARY_HEADER = [
    "sweep_axis",
    "sweep_value",
    "variant",
    "seed",
    "joint_isi",
    "cross_joint_isi",
    "sf",
    "iters",
    "runtime_s",
    "converged",
]
PLOT_METRICS = ("joint_isi", "cross_joint_isi", "sf", "runtime_s")


@dataclass
class AlgorithmSpec:
    """One variant plus optional overrides of its defaults."""

    variant: str
    gamma: Optional[float] = None
    mu_max: Optional[float] = None
    rho: Optional[float] = None
    thresholds: Optional[List[float]] = None
    lam: Optional[float] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.label is None:
            self.label = self.variant

    def constraint(self) -> Optional[ConstraintSettings]:
        if self.variant not in LAGRANGIAN_VARIANTS:
            return None
        cs = ConstraintSettings.defaults(self.variant)
        if self.gamma is not None:
            cs.gamma = float(self.gamma)
        if self.mu_max is not None:
            cs.mu_max = float(self.mu_max)
        if self.rho is not None:
            cs.rho = float(self.rho)
        if self.thresholds is not None:
            cs.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        cs.validate()
        return cs

    def regularizer(self) -> Optional[RegularizerSettings]:
        if self.variant != "tf-civa":
            return None
        return RegularizerSettings(1.0 if self.lam is None else float(self.lam))


@dataclass
class ExperimentConfig:
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    algorithms: List[AlgorithmSpec] = field(
        default_factory=lambda: [AlgorithmSpec(v) for v in VARIANTS]
    )
    sweep_axis: str = "none"
    sweep_values: List[Any] = field(default_factory=list)
    runs_per_point: int = 1
    seed: int = 0
    output_dir: Optional[str] = None
    shared_init: bool = True
    fresh_sources: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)
    threads: int = 1
    record_runtime: bool = True
    write_reports: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.sweep_axis not in ("K", "M", "none"):
            raise ConfigError(f"sweep axis must be K, M or none, got {self.sweep_axis!r}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty")
        if self.runs_per_point < 1:
            raise ConfigError("runs_per_point must be >= 1")
        if not self.algorithms:
            raise ConfigError("no algorithms configured")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.solver.validate()
        self.hybrid.validate()
        if self.sweep_axis == "M" and any(int(m) > self.hybrid.N for m in self.sweep_values):
            raise ConfigError("M sweep values cannot exceed N")

    @property
    def points(self) -> List[Any]:
        return list(self.sweep_values) if self.sweep_axis != "none" else [None]

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        sweep = d.pop("sweep", None)
        if isinstance(sweep, dict):
            d.setdefault("sweep_axis", sweep.get("axis", "none"))
            d.setdefault("sweep_values", sweep.get("values", []))
        if "seeds" in d:
            d["seed"] = d.pop("seeds")
        hybrid = HybridConfig(**d.pop("hybrid", {}))
        solver = SolverSettings(**d.pop("solver", {}))
        algos = d.pop("algorithms", None)
        if algos is None:
            algorithms = [AlgorithmSpec(v) for v in VARIANTS]
        else:
            algorithms = [AlgorithmSpec(a) if isinstance(a, str) else AlgorithmSpec(**a) for a in algos]
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(hybrid=hybrid, algorithms=algorithms, solver=solver, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            return cls.from_dict(tomllib.loads(text))
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["hybrid"] = self.hybrid.to_dict()
        d["solver"] = self.solver.to_dict()
        return d


def derive_seed(base: int, *parts) -> int:
    """``base`` plus a stable hash of ``parts``; independent of Python's hash salt."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return (int(base) + int.from_bytes(h, "little")) % (2**63)


@dataclass
class ExperimentResult:
    rows: List[Dict[str, Any]]
    aggregate: List[Dict[str, Any]]
    reports: List[RunReport]
    output_dir: Optional[Path] = None


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def summary_csv_text(rows: List[Dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in SUMMARY_HEADER])
    return buf.getvalue()


def aggregate_rows(rows: List[Dict[str, Any]], labels: List[str]) -> List[Dict[str, Any]]:
    """Mean and (population) std of every metric per sweep point and variant."""
    out = []
    points = []
    for r in rows:
        if r["sweep_value"] not in points:
            points.append(r["sweep_value"])
    for p in points:
        for lab in labels:
            sel = [r for r in rows if r["sweep_value"] == p and r["variant"] == lab]
            if not sel:
                continue
            agg = {"sweep_axis": sel[0]["sweep_axis"], "sweep_value": p, "variant": lab, "runs": len(sel)}
            for m in PLOT_METRICS + ("iters",):
                vals = np.array([float(r[m]) for r in sel])
                agg[f"{m}_mean"] = float(np.mean(vals))
                agg[f"{m}_std"] = float(np.std(vals))
            agg["converged_frac"] = float(np.mean([bool(r["converged"]) for r in sel]))
            out.append(agg)
    return out


def aggregate_csv_text(agg: List[Dict[str, Any]]) -> str:
    if not agg:
        return ""
    keys = list(agg[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for a in agg:
        w.writerow([_fmt(a[k]) for k in keys])
    return buf.getvalue()


def emit_plot_data(aggregate: List[Dict[str, Any]], out_dir) -> List[Path]:
    """One whitespace-delimited table per metric: sweep value, then mean and
    std per algorithm."""
    if not aggregate:
        raise ValueError("empty summary")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = []
    points = []
    for a in aggregate:
        if a["variant"] not in labels:
            labels.append(a["variant"])
        if a["sweep_value"] not in points:
            points.append(a["sweep_value"])
    index = {(a["sweep_value"], a["variant"]): a for a in aggregate}
    paths = []
    for metric in PLOT_METRICS:
        cols = ["sweep_value"] + [f"{lab}_{s}" for lab in labels for s in ("mean", "std")]
        lines = ["# " + " ".join(cols)]
        for p in points:
            vals = [_fmt(p if p not in (None, "") else 0)]
            for lab in labels:
                a = index.get((p, lab))
                vals += [_fmt(a[f"{metric}_mean"]), _fmt(a[f"{metric}_std"])] if a else ["nan", "nan"]
            lines.append(" ".join(vals))
        path = out_dir / f"{metric}.dat"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def _point_config(cfg: ExperimentConfig, value) -> HybridConfig:
    h = HybridConfig(**cfg.hybrid.to_dict())
    if cfg.sweep_axis == "K":
        h.K = int(value)
    elif cfg.sweep_axis == "M":
        h.M = int(value)
    h.validate()
    return h


def _run_one(variant_spec: AlgorithmSpec, problem, truth, init, settings, M):
    rep = solve(
        variant_spec.variant,
        problem,
        settings=settings,
        constraint=variant_spec.constraint(),
        regularizer=variant_spec.regularizer(),
        init=init,
    )
    rep.metrics["joint_isi"] = joint_isi_from(rep.W, truth.mixing)
    if M >= 1:
        if variant_spec.variant == "iva-g-v":
            perm = match_components(truth, rep.W, problem.data)
            rep.metrics["sf_pairing"] = "matched"
        else:
            perm = None
            rep.metrics["sf_pairing"] = "index"
        rep.metrics["sf"] = similarity_factor(truth, rep.W, problem.data, M, perm)
    else:
        rep.metrics["sf"] = float("nan")
    return rep


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """Generate data per sweep point, run every algorithm per run, compute
    metrics (including cross-joint-ISI across a point's runs) and, when an
    output directory is configured, persist reports, matrices and CSVs."""
    cfg.validate()
    threads = threads or cfg.threads
    out = Path(cfg.output_dir) if cfg.output_dir else None
    axis = cfg.sweep_axis
    rows: List[Dict[str, Any]] = []
    reports: List[RunReport] = []
    labels = [a.label for a in cfg.algorithms]
    ref_seed = derive_seed(cfg.seed, "references")

    for value in cfg.points:
        hcfg = _point_config(cfg, value)
        mix_seed = derive_seed(cfg.seed, "mixing", value)
        jobs = []
        problems = {}
        for run in range(cfg.runs_per_point):
            src_seed = derive_seed(cfg.seed, "sources", value, run if cfg.fresh_sources else 0)
            key = src_seed
            if key not in problems:
                data, truth, refs = generate_hybrid(hcfg, src_seed, mix_seed, ref_seed)
                problems[key] = (make_problem(data, refs), truth)
            problem, truth = problems[key]
            for spec in cfg.algorithms:
                parts = ("init", value, run) if cfg.shared_init else ("init", value, run, spec.label)
                init_seed = derive_seed(cfg.seed, *parts)
                settings = SolverSettings(**{**cfg.solver.to_dict(), "seed": init_seed})
                init = random_init(hcfg.N, hcfg.K, init_seed)
                jobs.append((run, spec, problem, truth, init, settings))

        def work(job):
            run, spec, problem, truth, init, settings = job
            try:
                return run, spec, _run_one(spec, problem, truth, init, settings, hcfg.M), None
            except Exception as exc:  # a failed run is recorded, the sweep goes on
                logger.warning("run %s/%s failed: %s", spec.label, run, exc)
                return run, spec, None, exc

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(j) for j in jobs]

        for spec in cfg.algorithms:
            mine = [(run, rep, err) for run, s, rep, err in results if s is spec]
            ok = [rep for _, rep, err in mine if rep is not None]
            cj = cross_joint_isi([r.W for r in ok]) if len(ok) > 1 else np.zeros(len(ok))
            cj_iter = iter(cj)
            for run, rep, err in mine:
                row = {
                    "sweep_axis": axis,
                    "sweep_value": value if value is not None else "",
                    "variant": spec.label,
                    "seed": derive_seed(cfg.seed, "init", value, run),
                }
                if rep is None:
                    row.update(joint_isi=float("nan"), cross_joint_isi=float("nan"), sf=float("nan"),
                               iters=0, runtime_s=float("nan"), converged=False)
                    rows.append(row)
                    continue
                rep.metrics["cross_joint_isi"] = float(next(cj_iter))
                rep.config["experiment"] = {"sweep_axis": axis, "sweep_value": value, "run": run,
                                            "label": spec.label}
                row.update(
                    joint_isi=rep.metrics["joint_isi"],
                    cross_joint_isi=rep.metrics["cross_joint_isi"],
                    sf=rep.metrics["sf"],
                    iters=rep.iterations,
                    runtime_s=rep.wall_time if cfg.record_runtime else float("nan"),
                    converged=rep.converged,
                )
                row["seed"] = rep.seed
                rows.append(row)
                reports.append(rep)
                if out is not None and cfg.write_reports:
                    tag = f"{axis}_{value}" if value is not None else "single"
                    base = out / "runs" / tag / f"{spec.label}_run{run}"
                    rep.paths = {
                        "W": str(write_stack(base.with_suffix(".W.bin"), rep.W)),
                        "Sigma": str(write_stack(base.with_suffix(".Sigma.bin"), rep.Sigma)),
                    }
                    rep.write(base.with_suffix(".jsonl"))

    agg = aggregate_rows(rows, labels)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary_csv_text(rows))
        (out / "aggregate.csv").write_text(aggregate_csv_text(agg))
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=str))
        if agg:
            emit_plot_data(agg, out / "plots")
    return ExperimentResult(rows, agg, reports, out)


__all__ = [
    "AlgorithmSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "emit_plot_data",
    "summary_csv_text",
    "aggregate_rows",
    "derive_seed",
    "SUMMARY_HEADER",
]
