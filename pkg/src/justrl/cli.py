"""Command-line entry point: ``justrl {train,eval,verify,budget,plot,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The worker count for rollout sampling comes from ``JUSTRL_WORKERS``; it only
changes speed, never results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .checkpoint import load_policy, sidecar_path
from .config import load_eval_config, load_train_config, parse_pairs
from .errors import CheckpointError, ConfigError
from .evaluation import BudgetSpec, EvalConfig, default_n_samples, evaluate, token_budget
from .policy import ScriptedPolicy
from .tasks import ideal_response, load_jsonl
from .trainer import (
    TrainingIOError,
    checkpoint_name,
    load_tasks,
    make_base_policy,
    planned_checkpoints,
    read_telemetry,
    train,
)
from .verifier import PROFILES, verify
from .vocab import DEFAULT_VOCAB

log = logging.getLogger("justrl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# rows of the published compute tables reproduced by ``justrl budget --table``
PUBLISHED_BUDGETS = (
    ("JustRL-DeepSeek", 4380, 256, 8, 16_000, False, 1.4e8),
    ("JustRL-Nemotron", 3440, 256, 8, 16_000, False, 1.1e8),
    ("QuestA", 2000, 128, 16, 32_000, True, 2.6e8),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 already; keep its message format
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_tokens(text: str) -> float:
    text = text.strip().lower()
    if text.endswith("k"):
        return float(text[:-1]) * 1000
    return float(text)


# -- train ------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    try:
        cfg = load_train_config(args.config)
        if args.seed is not None:
            cfg = type(cfg)(**{**cfg.to_dict(), "seed": args.seed})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out)
    diagnostics: list[str] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        tasks = load_tasks(cfg, diagnostics)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for d in diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    if not tasks:
        print("error: task source produced no tasks", file=sys.stderr)
        return EXIT_USAGE

    start_step = 0
    if args.resume:
        try:
            policy, meta = load_policy(args.resume)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        start_step = int(meta.get("step", 0))
    else:
        policy = make_base_policy(cfg, tasks)

    ckpt_dir = Path("checkpoints")
    artifacts = [
        "manifest.json",
        "telemetry.csv",
        *(str(ckpt_dir / checkpoint_name(s)) for s in planned_checkpoints(cfg, start_step)),
        *(str(sidecar_path(ckpt_dir / checkpoint_name(s))) for s in planned_checkpoints(cfg, start_step)),
        str(ckpt_dir / "best.bin"),
        str(ckpt_dir / "best.json"),
        "status.json",
    ]
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "code_version": __version__,
        "start_time": _now(),
        "resumed_from": str(args.resume) if args.resume else None,
        "start_step": start_step,
        "artifacts": artifacts,
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        result = train(policy, tasks, cfg, out, start_step=start_step)
        status = {
            "end_time": _now(),
            "final_step": cfg.total_steps,
            "final_mean_reward": result.telemetry[-1].mean_reward if result.telemetry else None,
            "checkpoints": [str(p.relative_to(out)) for p in result.checkpoints],
        }
        (out / "status.json").write_text(json.dumps(status, indent=2) + "\n")
    except TrainingIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"trained {cfg.total_steps - start_step} steps; artifacts in {out}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        cfg = load_eval_config(args.config) if args.config else EvalConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.profile:
            overrides["verifier_profile"] = args.profile
        if args.n_samples is not None:
            overrides["n_samples"] = args.n_samples
        if overrides:
            cfg = EvalConfig(**{**cfg.__dict__, **overrides})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.oracle and not args.checkpoint:
        print("error: --checkpoint is required unless --oracle is given", file=sys.stderr)
        return EXIT_USAGE

    benchmarks = {}
    for path in args.benchmark:
        diagnostics: list[str] = []
        try:
            tasks = load_jsonl(path, DEFAULT_VOCAB, args.max_prompt_len, diagnostics)
        except OSError as exc:
            print(f"error: cannot read benchmark {path}: {exc.strerror or exc}", file=sys.stderr)
            return EXIT_RUNTIME
        for d in diagnostics:
            print(f"warning: {d}", file=sys.stderr)
        benchmarks[Path(path).stem] = tasks

    if args.oracle:
        scripts = {t.prompt_tokens: ideal_response(t.gold) for ts in benchmarks.values() for t in ts}
        policy = ScriptedPolicy(DEFAULT_VOCAB, scripts)
    else:
        try:
            policy, _ = load_policy(args.checkpoint)
        except CheckpointError as exc:
            print(f"error: corrupt or unreadable checkpoint: {exc}", file=sys.stderr)
            return EXIT_RUNTIME

    explicit_n = args.n_samples is not None or (
        args.config and "n_samples" in parse_pairs(Path(args.config).read_text(), args.config)
    )
    per_bench_n = None if explicit_n else {name: default_n_samples(name) for name in benchmarks}
    report = evaluate(policy, benchmarks, cfg, n_samples=per_bench_n)
    try:
        paths = report.write(args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(report.table())
    log.info("wrote %s", ", ".join(map(str, paths)))
    return EXIT_OK


# -- verify -----------------------------------------------------------------------


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out_lines = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        obj = None
        try:
            obj = json.loads(line)
            output, gold = obj["output"], obj["gold"]
            if not isinstance(output, str) or not isinstance(gold, str):
                raise TypeError("output and gold must be strings")
            record = {"id": obj.get("id"), **verify(output, gold, args.profile).to_dict()}
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            # unreadable lines still get a verdict so output lines match input lines
            record = {
                "id": obj.get("id") if isinstance(obj, dict) else None,
                "status": "extraction_failed",
                "extracted": None,
                "reward": -1.0,
                "error": f"line {lineno}: {exc.__class__.__name__}: {exc}",
            }
        out_lines.append(json.dumps(record))
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- budget -----------------------------------------------------------------------


def cmd_budget(args: argparse.Namespace) -> int:
    if args.table:
        print(f"{'model':<16} {'computed (k tokens)':>20} {'published':>10}")
        for name, steps, bs, n, ctx, ds, published in PUBLISHED_BUDGETS:
            k = token_budget(BudgetSpec(steps, bs, n, ctx, ds)) / 1000
            print(f"{name:<16} {k:>20.3e} {published:>10.1e}")
        return EXIT_OK
    missing = [f for f in ("steps", "batch_size", "rollout_n", "max_context") if getattr(args, f) is None]
    if missing:
        print(f"error: missing --{', --'.join(m.replace('_', '-') for m in missing)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        spec = BudgetSpec(
            args.steps, args.batch_size, args.rollout_n, _parse_tokens(args.max_context), args.dynamic_sampling, args.filter_ratio
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    tokens = token_budget(spec)
    print(json.dumps({"tokens": tokens, "k_tokens": tokens / 1000, "k_tokens_2sf": float(f"{tokens / 1000:.2g}")}))
    return EXIT_OK


# -- plot -------------------------------------------------------------------------


def cmd_plot(args: argparse.Namespace) -> int:
    from .plotting import write_svg

    try:
        records = read_telemetry(args.telemetry)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot read {args.telemetry}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE
    if not records:
        print(f"error: {args.telemetry}: no telemetry rows after the header", file=sys.stderr)
        return EXIT_USAGE
    try:
        write_svg(records, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------------


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradcheck import run

    ok, results = run(args.instances, args.seed if args.seed is not None else 0, args.tol)
    worst = max(r.max_rel_error for r in results)
    lows = sum(r.clipped_low for r in results)
    highs = sum(r.clipped_high for r in results)
    print(
        f"{len(results)} checks, worst relative error {worst:.2e} (tol {args.tol:.0e}); "
        f"clamped tokens: {lows} below low, {highs} above high -> {'PASS' if ok else 'FAIL'}"
    )
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="justrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run single-stage GRPO training")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="avg@N pass@1 evaluation")
    e.add_argument("--checkpoint")
    e.add_argument("--benchmark", action="append", default=[], required=True, help="JSONL file; repeatable")
    e.add_argument("--config", help="eval config (key = value)")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--n-samples", type=int)
    e.add_argument("--profile", choices=sorted(PROFILES))
    e.add_argument("--max-prompt-len", type=int, default=64)
    e.add_argument("--oracle", action="store_true", help="harness check: a scripted policy answering every gold")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="score {id, output, gold} JSONL lines")
    v.add_argument("--input", required=True)
    v.add_argument("--out", dest="output")
    v.add_argument("--profile", choices=sorted(PROFILES), default="strict")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("budget", help="approximate rollout token budget")
    b.add_argument("--steps", type=float)
    b.add_argument("--batch-size", type=float)
    b.add_argument("--rollout-n", type=float)
    b.add_argument("--max-context", help="tokens, e.g. 16k or 16000")
    b.add_argument("--dynamic-sampling", action="store_true")
    b.add_argument("--filter-ratio", type=float, default=0.5)
    b.add_argument("--table", action="store_true", help="recompute the published budget rows")
    b.set_defaults(func=cmd_budget)

    pl = sub.add_parser("plot", help="three-panel SVG of a telemetry CSV")
    pl.add_argument("--telemetry", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    g = sub.add_parser("gradcheck", help="finite-difference self-test of the analytic gradients")
    g.add_argument("--instances", type=int, default=100)
    g.add_argument("--seed", type=int)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
