"""Command line entry points: train, reference, benchmark, rank-study."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, griddump, pde, train


def _cmd_train(args):
    cfg = train.TrainConfig.from_json(args.config)
    test_set = train.make_test_set(cfg.problem, args.test_funcs, args.test_seed) if args.test_funcs else None
    result = train.run_to_dir(cfg, args.out, test_set)
    print(json.dumps({k: v for k, v in result.telemetry.items()}, indent=2))


def _cmd_reference(args):
    prob = pde.get_problem(args.problem)
    ts = train.make_test_set(prob.name, args.n_funcs, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    griddump.write_solution(out / f"{prob.name}_solution.sepg", ts.solution)
    sensors = prob.sensors()
    sensor_axes = [sensors] if prob.spatial_dim == 1 else list(sensors)
    vals = ts.inputs.values.reshape(len(ts.inputs), *[np.size(a) for a in sensor_axes])
    griddump.write_grid(out / f"{prob.name}_inputs.sepg", vals, sensor_axes, ts.inputs.descriptor)
    print(f"wrote {args.n_funcs} {prob.name} reference solutions to {out}")


def _cmd_benchmark(args):
    spec = bench.SweepSpec.from_json(args.spec)
    budget = int(args.budget_gb * 1024**3)
    report = bench.run_sweep(spec, args.out, budget, args.parallel)
    bench.emit_plot_data(report, Path(args.out) / "plots")
    for row in report.rows:
        print(row["model"], row["N_f"], row["N"], row["status"], row["rel_l2_mean"])


def _cmd_rank_study(args):
    base = {"iterations": args.iterations, "width": args.width, "depth": args.depth,
            "n_funcs": args.n_funcs, "N": args.N}
    study = bench.rank_study(args.ranks, args.K, base, out_dir=args.out)
    for row in study.rows:
        print(row["kind"], row["rank"], row["rmse_mean"])


def _ints(s):
    return [int(v) for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seponet")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-funcs", type=int, default=100, help="0 skips evaluation")
    p.add_argument("--test-seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reference", help="write reference solutions as grid dumps")
    p.add_argument("--problem", required=True, choices=sorted(pde.PROBLEMS))
    p.add_argument("--n-funcs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reference)

    p = sub.add_parser("benchmark", help="run a sweep from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget-gb", type=float, default=8.0)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("rank-study", help="heat-equation rank study")
    p.add_argument("--out", required=True)
    p.add_argument("--ranks", type=_ints, default=[1, 2, 4, 8, 16])
    p.add_argument("--K", type=_ints, default=[1, 2, 4, 8, 16])
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--width", type=int, default=25)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--n-funcs", type=int, default=20)
    p.add_argument("--N", type=int, default=32)
    p.set_defaults(func=_cmd_rank_study)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
