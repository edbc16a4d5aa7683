"""Command-line entry point: ``svcompress <stage> [options]``.

Values come from the defaults, then ``--config`` (JSON), then explicit
flags.  Flag names mirror the configuration keys.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import SvcError
from .io import read_json, write_json
from .pipeline import PipelineConfig
from .stages import STAGES, run_all, run_stage

logger = logging.getLogger("svcompress")

# flag -> config key
OVERRIDES = {
    "seed": "seed", "threads": "threads", "method": "method", "max_principle": "max_principle",
    "relevance_factor": "relevance_factor", "iterations": "iterations", "beta": "beta", "d": "d",
    "plda_rank": "plda_rank", "ubm_components": "ubm_components",
}


def _common(p):
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--workdir", type=Path, default=Path("work"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--reproducible", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--method", choices=["fefa", "pca", "ppca", "fa", "ppls", "sppca"])
    p.add_argument("--max-principle", type=int, choices=[1, 2])
    p.add_argument("--relevance-factor", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--d", type=int, help="i-vector dimension")
    p.add_argument("--plda-rank", type=int)
    p.add_argument("--ubm-components", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)


def load_config(args):
    cfg = PipelineConfig.from_dict(read_json(args.config)) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    updates = {key: getattr(args, flag) for flag, key in OVERRIDES.items()
               if flag != "seed" and getattr(args, flag, None) is not None}
    if getattr(args, "reproducible", None) is not None:
        updates["reproducible"] = args.reproducible
    return replace(cfg, **updates)


def build_parser():
    parser = argparse.ArgumentParser(prog="svcompress", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage"))
    run = sub.add_parser("run", help="run every stage for one method")
    _common(run)
    run.add_argument("--methods", nargs="+", help="method[:principle] list; default is --method")

    bench = sub.add_parser("benchmark", help="time TVM training per method")
    bench.add_argument("--methods", nargs="+", default=["fefa", "ppca", "fa", "ppls", "pca"])
    bench.add_argument("--U", type=int, default=2000)
    bench.add_argument("--C", type=int, default=256)
    bench.add_argument("--F", type=int, default=20)
    bench.add_argument("--d", type=int, default=100)
    bench.add_argument("--iterations", type=int, default=5)
    bench.add_argument("--repetitions", type=int, default=3)
    bench.add_argument("--max-principle", type=int, choices=[1, 2], default=1)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--fefa-threads", type=int, default=1)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--output", type=Path, default=Path("benchmark.json"))
    bench.add_argument("-v", "--verbose", action="count", default=0)

    sweep = sub.add_parser("sweep", help="EER over a swept parameter, in memory")
    _common(sweep)
    sweep.add_argument("--param", required=True, choices=["relevance_factor", "iterations", "beta"])
    sweep.add_argument("--values", type=float, nargs="+", required=True)
    sweep.add_argument("--methods", nargs="+", default=["ppca", "fa"])
    sweep.add_argument("--output", type=Path, default=Path("sweep.json"))

    post = sub.add_parser("verify-posterior", help="numerical check of the PPCA posterior")
    post.add_argument("--models", type=int, default=100)
    post.add_argument("--h", type=int, default=20)
    post.add_argument("--d", type=int, default=3)
    post.add_argument("--seed", type=int, default=0)
    post.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _method_specs(specs, cfg):
    out = []
    for spec in specs or [f"{cfg.method}:{cfg.max_principle}"]:
        method, _, principle = spec.partition(":")
        out.append(replace(cfg, method=method, max_principle=int(principle or cfg.max_principle)))
    return out


def cmd_run(args):
    cfg = load_config(args)
    specs = _method_specs(args.methods, cfg)
    run_all(specs[0], args.workdir, STAGES[:4])
    for c in specs:
        run_all(c, args.workdir, STAGES[4:])
    print(json.dumps(read_json(args.workdir / "metrics.json"), indent=2, sort_keys=True))


def cmd_benchmark(args):
    from .bench import BenchmarkConfig, benchmark
    from .plotting import plot_training_times
    cfg = BenchmarkConfig(U=args.U, C=args.C, F=args.F, d=args.d, iterations=args.iterations,
                          repetitions=args.repetitions, max_principle=args.max_principle,
                          threads=args.threads, fefa_threads=args.fefa_threads, seed=args.seed)
    report = benchmark(args.methods, cfg)
    write_json(args.output, report)
    plot_training_times(report, args.output.with_suffix(".png"))
    for m in report["methods"]:
        print(f"{m['method']:6s} threads={m['threads']} per-iteration {m['median_per_iteration_seconds']:.4f} s"
              f"  total {m['median_total_seconds']:.3f} s")
    for m, ratio in report.get("speedup_vs_fefa", {}).items():
        print(f"speedup {m} vs fefa: {ratio:.1f}x")


def cmd_sweep(args):
    from .pipeline import Experiment
    from .plotting import plot_sweep
    cfg = load_config(args)
    exp = Experiment(cfg)
    cast = int if args.param == "iterations" else float
    values = [cast(v) for v in args.values]
    results = {}
    for method in args.methods:
        results[method] = [exp.run(method=method, **{args.param: v}) for v in values]
        for v, r in zip(values, results[method]):
            print(f"{method:6s} {args.param}={v:g}  EER {r['eer']:.2f}%  minDCF {r['min_dcf']:.3f}%")
    write_json(args.output, {"param": args.param, "values": values, "results": results})
    plot_sweep(values, {m: [r["eer"] for r in rs] for m, rs in results.items()},
               args.output.with_suffix(".png"), args.param.replace("_", " "),
               logx=args.param == "relevance_factor")


def cmd_verify_posterior(args):
    from .tvm import verify_random_models
    report = verify_random_models(args.models, args.h, args.d, args.seed)
    print(json.dumps(report, indent=2))
    return 0 if report["max_discrepancy"] < 1e-8 else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args) or 0
        if args.command == "benchmark":
            return cmd_benchmark(args) or 0
        if args.command == "sweep":
            return cmd_sweep(args) or 0
        if args.command == "verify-posterior":
            return cmd_verify_posterior(args)
        manifest = run_stage(args.command, load_config(args), args.workdir)
        print(json.dumps({k: manifest[k] for k in ("stage", "outputs")}, indent=2))
        return 0
    except SvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
