"""``civa`` command line: simulate, run, sweep, metrics, verify."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..constraints import VARIANTS
from ..core import DatasetCollection, ReferenceSet, random_init
from ..errors import CIVAError
from ..hybrid import GroundTruth, HybridConfig, generate_hybrid
from ..io import read_matrix, read_stack, write_matrix, write_stack
from ..iva_g import SolverSettings
from ..metrics import cross_joint_isi, joint_isi_from, match_components, similarity_factor
from ..solver import solve
from .experiment import AlgorithmSpec, ExperimentConfig, run_experiment
from .verify import format_table, run_checks


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def _algorithm_overrides(args) -> dict:
    keys = {"gamma": "gamma", "mu_max": "mu_max", "lam": "lam", "rho": "rho"}
    return {dst: getattr(args, src) for src, dst in keys.items() if getattr(args, src, None) is not None}


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.hybrid.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "eta0", None) is not None:
        cfg.solver.eta0 = args.eta0
    if getattr(args, "variant", None):
        cfg.algorithms = [AlgorithmSpec(v) for v in args.variant]
    ov = _algorithm_overrides(args)
    for spec in cfg.algorithms:
        for key, value in ov.items():
            setattr(spec, key, value)
    cfg.validate()
    return cfg


def cmd_simulate(args) -> int:
    base = _load_config(args.config).hybrid.to_dict()
    if args.seed is not None:
        base["seed"] = args.seed
    dims = {d: getattr(args, d.lower()) for d in ("N", "K", "V", "M")}
    if dims["N"] is not None and dims["N"] != base["N"]:
        # phi and M default from N
        base["phi"] = None
        base["M"] = None
    base.update({d: v for d, v in dims.items() if v is not None})
    cfg = HybridConfig(**base)
    data, truth, refs = generate_hybrid(cfg)
    out = Path(args.out or "hybrid")
    out.mkdir(parents=True, exist_ok=True)
    write_stack(out / "data.bin", data.datasets)
    write_stack(out / "mixing.bin", truth.mixing)
    write_stack(out / "sources.bin", truth.sources)
    write_matrix(out / "references.bin", truth.references[: cfg.M] if cfg.M else np.zeros((0, cfg.V)))
    (out / "meta.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    print(f"wrote N={cfg.N} K={cfg.K} V={cfg.V} M={cfg.M} to {out}")
    return 0


def _read_problem(args):
    if args.data_dir:
        d = Path(args.data_dir)
        meta = json.loads((d / "meta.json").read_text())
        N = meta["N"]
        data = DatasetCollection(read_stack(d / "data.bin", N))
        R = read_matrix(d / "references.bin")
        refs = ReferenceSet(R) if R.shape[0] else None
        truth = GroundTruth(read_stack(d / "sources.bin", meta["K"]), read_stack(d / "mixing.bin", N))
        return data, refs, truth
    if not args.data or not args.n:
        raise SystemExit("run needs --data-dir, or --data together with --n")
    data = DatasetCollection(read_stack(args.data, args.n))
    refs = ReferenceSet(read_matrix(args.refs)) if args.refs else None
    return data, refs, None


def cmd_run(args) -> int:
    data, refs, truth = _read_problem(args)
    N, K, _ = data.dims
    variant = args.variant[0] if args.variant else "ar-civa"
    settings = SolverSettings(seed=args.seed or 0)
    if args.eta0 is not None:
        settings.eta0 = args.eta0
    if args.max_iters is not None:
        settings.max_iters = args.max_iters
    settings.validate()
    spec = AlgorithmSpec(variant, **_algorithm_overrides(args))
    if variant == "iva-g-v":
        refs = None
    elif args.m is not None and refs is not None:
        refs = ReferenceSet(refs.references[: args.m])
    rep = solve(variant, data, refs, settings, spec.constraint(), spec.regularizer(),
                init=random_init(N, K, settings.seed))
    if truth is not None:
        rep.metrics["joint_isi"] = joint_isi_from(rep.W, truth.mixing)
        M = refs.M if refs is not None else truth.sources.shape[0]
        perm = match_components(truth, rep.W, data) if variant == "iva-g-v" else None
        rep.metrics["sf"] = similarity_factor(truth, rep.W, data, M, perm)
        rep.metrics["sf_pairing"] = "matched" if perm is not None else "index"
    out = Path(args.out or "run")
    rep.paths = {
        "W": str(write_stack(out / "W.bin", rep.W)),
        "Sigma": str(write_stack(out / "Sigma.bin", rep.Sigma)),
    }
    rep.write(out / "report.jsonl")
    print(json.dumps(rep.summary(), indent=2, default=str))
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    if not cfg.output_dir:
        cfg.output_dir = "sweep_out"
    res = run_experiment(cfg)
    for a in res.aggregate:
        print(
            f"{a['sweep_axis']}={a['sweep_value']!s:>4} {a['variant']:<11} "
            f"joint-ISI {a['joint_isi_mean']:.4f}±{a['joint_isi_std']:.4f}  "
            f"cross {a['cross_joint_isi_mean']:.4f}  SF {a['sf_mean']:.4f}  "
            f"t {a['runtime_s_mean']:.2f}s"
        )
    print(f"results in {res.output_dir}")
    return 0


def cmd_metrics(args) -> int:
    runs = [read_stack(p, args.n) for p in args.W]
    out = {}
    if args.A:
        A = read_stack(args.A, args.n)
        out["joint_isi"] = [joint_isi_from(W, A) for W in runs]
    if len(runs) > 1:
        out["cross_joint_isi"] = cross_joint_isi(runs).tolist()
    print(json.dumps(out, indent=2))
    return 0


def cmd_verify(args) -> int:
    if args.config:
        _load_config(args.config)  # configuration errors surface before any check
    results = run_checks()
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="civa", description="Constrained IVA with Gaussian sources")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variants=True):
        sp.add_argument("--config", help="TOML or JSON experiment configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int)
        if variants:
            sp.add_argument("--variant", action="append", choices=VARIANTS)
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--mu-max", dest="mu_max", type=float)
            sp.add_argument("--lambda", dest="lam", type=float)
            sp.add_argument("--rho", type=float)
            sp.add_argument("--eta0", type=float)

    sp = sub.add_parser("simulate", help="write a hybrid dataset to files")
    common(sp, variants=False)
    for dim in ("n", "k", "v", "m"):
        sp.add_argument(f"--{dim}", type=int, dest=dim)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run one algorithm on stored data")
    common(sp)
    sp.add_argument("--data-dir", help="directory written by 'simulate'")
    sp.add_argument("--data", help="stacked (K*N, V) data matrix file")
    sp.add_argument("--refs", help="(M, V) reference matrix file")
    sp.add_argument("--n", type=int, help="number of components when using --data")
    sp.add_argument("--m", type=int, help="use only the first m references")
    sp.add_argument("--max-iters", dest="max_iters", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a full experiment")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("metrics", help="metrics from stored demixing/mixing files")
    sp.add_argument("--W", action="append", required=True, help="demixing stack (repeat for runs)")
    sp.add_argument("--A", help="true mixing stack")
    sp.add_argument("--n", type=int, required=True)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("verify", help="fast invariant suite")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except CIVAError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

__all__ = ["main", "build_parser"]
