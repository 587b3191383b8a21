"""Command-line orchestrator.

Subcommands: build-dataset, train-experts, generate, evaluate,
audit-cache. Exit codes: 0 success, 2 config error, 3 backend error,
4 validation error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .config import PipelineConfig, stub_config
from .errors import (
    BackendError,
    ConfigError,
    EmptyAnswerError,
    GenerationError,
    PipelineError,
    TrainingFailedError,
)
from .pipeline import (
    run_audit,
    run_build_dataset,
    run_evaluate,
    run_generate,
    run_train_experts,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_VALIDATION = 4

DEFAULT_CACHE_DIR = "viewforge-cache"


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        config = stub_config(args.cache_dir or DEFAULT_CACHE_DIR)
    if args.config and args.cache_dir:
        raw = config.to_dict()
        raw["cache_dir"] = args.cache_dir
        config = PipelineConfig.from_dict(raw)
    return config


def _exit_code(exc: PipelineError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(
        exc, (BackendError, GenerationError, TrainingFailedError, EmptyAnswerError)
    ):
        return EXIT_BACKEND
    return EXIT_VALIDATION


def cmd_generate(args) -> int:
    config = _load_config(args)
    result = run_generate(
        config,
        args.image,
        seed=args.seed,
        prompt_override=args.prompt_override,
        prompt_suffix=args.prompt_suffix,
        reference_transform=args.reference_transform,
        refine=True if args.refine else None,
        out_dir=args.out,
    )
    print(f"bundle: {result.bundle_dir}")
    for stage, hit in sorted(result.cache_hits.items()):
        print(f"cache[{stage}]: {'hit' if hit else 'miss'}")
    for w in result.warnings:
        print(f"warning: {w}")
    if args.out:
        print(f"copied to: {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    result = run_evaluate(
        config, args.bundle_dir, args.reference, method_label=args.method_label
    )
    r = result.report
    print(f"report: {result.report_path}")
    print(
        f"itc={r.itc:.4f} clip_similarity={r.clip_similarity:.4f} "
        f"fid={r.fid:.4f} vqa_score={r.vqa_score:.4f} n_views={r.n_views}"
    )
    if r.fixture_delta:
        for name, delta in sorted(r.fixture_delta.items()):
            print(f"delta[{name}]: {delta:+.4f}")
    print(f"aggregate: {result.csv_path}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    config = _load_config(args)
    result = run_build_dataset(config, args.index)
    print(f"render manifests: {len(result.manifest_paths)} under "
          f"{result.render_root}")
    if result.pending:
        print("awaiting external renders for "
              f"{len(result.pending)} instance(s):")
        for instance_id, missing in sorted(result.pending.items()):
            print(f"  {instance_id}: missing {', '.join(missing)}")
        return EXIT_OK
    assert result.pairs is not None
    print(f"training pairs: {result.n_pairs} "
          f"({result.pairs.n_instances} instances x "
          f"{1 + len(result.pairs.neighbor_manifests)} grids) under "
          f"{result.pairs.root}")
    return EXIT_OK


def cmd_train_experts(args) -> int:
    config = _load_config(args)
    result = run_train_experts(
        config, pairs_dir=args.pairs, experts_out=args.experts_out
    )
    print(f"experts: {result.experts_path}")
    for record in result.experts.job_records:
        print(f"job[{record['expert_id']}]: {record['status']} "
              f"(dataset {record['dataset_digest'][:12]})")
    return EXIT_OK


def cmd_audit_cache(args) -> int:
    config = _load_config(args)
    report = run_audit(config)
    clean = not any(report.values())
    for kind in ("orphans", "missing", "duplicates"):
        for item in report[kind]:
            print(f"{kind[:-1]}: {item}")
    if clean:
        print("cache: clean")
        return EXIT_OK
    print("cache: audit failed")
    return EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewforge",
        description="Pose-controlled multi-view vehicle asset generation.",
    )
    parser.add_argument(
        "--config", help="pipeline config JSON (default: all-stub config)"
    )
    parser.add_argument(
        "--cache-dir", help=f"cache directory (default: {DEFAULT_CACHE_DIR})"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "build-dataset",
        help="emit render manifests and, once rendered, training pairs",
    )
    p.add_argument("index", help="JSON list of instances "
                                 "(instance_id, model_path, bbox_min, bbox_max)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train-experts", help="submit the 5 expert fine-tunes")
    p.add_argument("--pairs", help="training-pair directory "
                                   "(default: <cache>/pairs)")
    p.add_argument("--experts-out", help="where to write experts.json")
    p.set_defaults(func=cmd_train_experts)

    p = sub.add_parser("generate", help="photograph -> 16-view asset bundle")
    p.add_argument("image", help="input photograph (PNG)")
    p.add_argument("--seed", type=int, default=None,
                   help="asset seed (default: config seed)")
    p.add_argument("--out", help="copy the bundle to this directory")
    p.add_argument("--prompt-override",
                   help="skip VQA and use this description text")
    p.add_argument("--prompt-suffix",
                   help="append fine-grained words to the description")
    p.add_argument("--reference-transform",
                   help="restyle the input via image2image with this prompt "
                        "before description extraction")
    p.add_argument("--refine", action="store_true",
                   help="run question refinement over the template bank")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a bundle against a reference")
    p.add_argument("bundle_dir", help="exported bundle directory")
    p.add_argument("reference", help="reference image (PNG)")
    p.add_argument("--method-label", default="ours")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit-cache",
                       help="verify every cache file is owned by one entry")
    p.set_defaults(func=cmd_audit_cache)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        code = _exit_code(exc)
        label = {EXIT_BACKEND: "backend error", EXIT_VALIDATION: "error"}[code]
        print(f"{label}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
