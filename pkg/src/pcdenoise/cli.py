"""``denoise`` command line: run | corrupt | score."""

from __future__ import annotations

import argparse
import sys

from .fileio import format_report_table, read_cloud, read_truth, write_cloud, write_truth
from .pipeline import STAGES, PipelineConfig, PipelineError, corrupt_cloud, run_pipeline, score_outlier_detection


def _sigma_s(text: str):
    if text == "auto":
        return None
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("sigma-s must be positive or 'auto'")
    return value


def _optional_count(text: str):
    return None if text in ("none", "all", "0") else int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denoise", description="Point cloud outlier removal and smoothing.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="denoise a point cloud")
    run.add_argument("--input", required=True)
    run.add_argument("--output", required=True)
    run.add_argument("--stages", choices=STAGES, default="full")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--report")
    run.add_argument("--k-neighbors", type=int, default=30)
    run.add_argument("--tau", type=float, default=3.0)
    run.add_argument("--min-cluster-fraction", type=float, default=0.005)
    run.add_argument("--shift-iterations", type=int, default=3)
    run.add_argument("--cluster-link", type=float, default=2.0,
                     help="link clusters closer than this many times the geometric-mean bandwidth "
                          "or the median 3rd-neighbor spacing, whichever is larger (0 disables)")
    run.add_argument("--pso-iterations", type=int, default=50)
    run.add_argument("--pso-stagnation-k", type=int, default=5)
    run.add_argument("--bandwidth-sample", type=_optional_count, default=50_000,
                     help="points used for bandwidth selection ('all' disables subsampling)")
    run.add_argument("--bandwidth-eval-points", type=_optional_count, default=1_000,
                     help="points whose leave-one-out density enters the objective ('all' for every point)")
    run.add_argument("--sigma-c", type=float, default=None)
    run.add_argument("--sigma-s", type=_sigma_s, default=None)
    run.add_argument("--smooth-iterations", type=int, default=3)
    run.add_argument("--cost-history")
    run.add_argument("--labeled-output")

    cor = sub.add_parser("corrupt", help="add noise and uniform outliers to a clean cloud")
    cor.add_argument("--input", required=True)
    cor.add_argument("--output", required=True)
    cor.add_argument("--truth", required=True)
    cor.add_argument("--noise-sigma", type=float, default=0.0)
    cor.add_argument("--outlier-fraction", type=float, default=0.05)
    cor.add_argument("--bbox-inflation", type=float, default=0.1)
    cor.add_argument("--seed", type=int, default=0)

    sc = sub.add_parser("score", help="precision/recall of a labeled cloud against ground truth")
    sc.add_argument("--verdict", required=True)
    sc.add_argument("--truth", required=True)
    return parser


def _run(args) -> int:
    try:
        config = PipelineConfig(
            input=args.input, output=args.output, stages=args.stages, seed=args.seed,
            threads=args.threads, report=args.report, cost_history=args.cost_history,
            labeled_output=args.labeled_output, pso_iterations=args.pso_iterations,
            pso_stagnation_k=args.pso_stagnation_k, bandwidth_sample=args.bandwidth_sample,
            bandwidth_eval_points=args.bandwidth_eval_points, k_neighbors=args.k_neighbors,
            tau=args.tau, min_cluster_fraction=args.min_cluster_fraction,
            shift_iterations=args.shift_iterations, cluster_link=args.cluster_link, sigma_c=args.sigma_c, sigma_s=args.sigma_s,
            smooth_iterations=args.smooth_iterations)
    except ValueError as exc:
        raise PipelineError("config", str(exc)) from exc
    report = run_pipeline(config)
    print(format_report_table(report, args.input))
    return 0


def _corrupt(args) -> int:
    try:
        clean, _, _ = read_cloud(args.input)
    except (OSError, ValueError) as exc:
        raise PipelineError("load", str(exc)) from exc
    try:
        noisy, truth = corrupt_cloud(clean, args.noise_sigma, args.outlier_fraction,
                                     args.bbox_inflation, args.seed)
    except ValueError as exc:
        raise PipelineError("corrupt", str(exc)) from exc
    try:
        write_cloud(noisy, args.output)
        write_truth(truth, args.truth)
    except (OSError, ValueError) as exc:
        raise PipelineError("save", str(exc)) from exc
    print(f"{noisy.n} points ({int(truth.sum())} outliers) -> {args.output}")
    return 0


def _score(args) -> int:
    try:
        cloud, _, _ = read_cloud(args.verdict)
        truth = read_truth(args.truth)
    except (OSError, ValueError) as exc:
        raise PipelineError("load", str(exc)) from exc
    if cloud.labels is None:
        raise PipelineError("score", f"{args.verdict} has no 'outlier' vertex property")
    try:
        s = score_outlier_detection(cloud.labels, truth)
    except ValueError as exc:
        raise PipelineError("score", str(exc)) from exc
    print(f"precision {s.precision:.4f}  recall {s.recall:.4f}  f1 {s.f1:.4f}")
    if s.undefined:
        print("undefined (zero denominator): " + ", ".join(s.undefined))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _run, "corrupt": _corrupt, "score": _score}[args.command]
    try:
        return handler(args)
    except PipelineError as exc:
        print(f"denoise: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
