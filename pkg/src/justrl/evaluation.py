"""avg@N pass@1 evaluation and rollout token-budget accounting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, StructuralError
from .sampling import SamplerSettings, sample_parallel, substream
from .tasks import Task
from .verifier import PROFILES, Verdict, verify

# benchmarks scored with 4 samples per problem; everything else uses 32
FOUR_SAMPLE_BENCHMARKS = frozenset({"math-500", "math500", "math", "minerva", "minerva math", "olympiadbench", "olympiad"})


def default_n_samples(benchmark: str) -> int:
    return 4 if benchmark.strip().lower().replace("_", "-") in FOUR_SAMPLE_BENCHMARKS else 32


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 4
    temperature: float = 0.7
    top_p: float = 0.9
    max_gen_tokens: int = 64
    verifier_profile: str = "strict"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.verifier_profile not in PROFILES:
            raise ConfigError(f"verifier_profile must be one of {sorted(PROFILES)}")
        self.sampler()

    def sampler(self) -> SamplerSettings:
        return SamplerSettings(self.temperature, self.top_p, self.max_gen_tokens, self.seed)


def pass_at_1(verdicts: Sequence[Sequence[bool]]) -> tuple[list[float], float]:
    """Per-problem fraction correct and the benchmark score (mean x 100)."""
    if len(verdicts) == 0:
        raise StructuralError("no problems to score")
    n = len(verdicts[0])
    if n == 0 or any(len(v) != n for v in verdicts):
        raise StructuralError("every problem needs the same, non-zero number of verdicts")
    per_problem = [sum(bool(x) for x in v) / n for v in verdicts]
    return per_problem, 100.0 * sum(per_problem) / len(per_problem)


@dataclass
class ProblemResult:
    id: str
    gold: str
    verdicts: list[Verdict]
    responses: list[str]
    score: float


@dataclass
class BenchmarkResult:
    name: str
    n_samples: int
    problems: list[ProblemResult]
    pass_at_1: float


@dataclass
class EvalReport:
    benchmarks: dict[str, BenchmarkResult] = field(default_factory=dict)

    @property
    def macro_average(self) -> Optional[float]:
        if not self.benchmarks:
            return None
        return float(np.mean([b.pass_at_1 for b in self.benchmarks.values()]))

    def to_json(self, include_responses: bool = False) -> dict:
        out = {"macro_average": self.macro_average, "benchmarks": {}}
        for name, bench in self.benchmarks.items():
            problems = []
            for p in bench.problems:
                entry = {"id": p.id, "gold": p.gold, "score": p.score, "verdicts": [v.to_dict() for v in p.verdicts]}
                if include_responses:
                    entry["responses"] = p.responses
                problems.append(entry)
            out["benchmarks"][name] = {"pass_at_1": bench.pass_at_1, "n_samples": bench.n_samples, "problems": problems}
        return out

    def table(self) -> str:
        rows = [("benchmark", "N", "problems", "pass@1")]
        for name, b in self.benchmarks.items():
            rows.append((name, str(b.n_samples), str(len(b.problems)), f"{b.pass_at_1:.2f}"))
        avg = self.macro_average
        rows.append(("average", "", "", "-" if avg is None else f"{avg:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
            if i == 0 or i == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "eval") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js, txt, cs = out_dir / f"{stem}.json", out_dir / f"{stem}.txt", out_dir / f"{stem}_problems.csv"
        js.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        txt.write_text(self.table())
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["benchmark", "problem_id", "n_samples", "n_correct", "score"])
            for name, b in self.benchmarks.items():
                for p in b.problems:
                    n_correct = sum(v.correct for v in p.verdicts)
                    w.writerow([name, p.id, b.n_samples, n_correct, repr(p.score)])
        return [js, txt, cs]


def evaluate_benchmark(
    policy, tasks: Sequence[Task], cfg: EvalConfig, name: str = "benchmark", workers: Optional[int] = None
) -> BenchmarkResult:
    """Sample ``cfg.n_samples`` responses per problem and verify each one."""
    if not tasks:
        raise StructuralError(f"benchmark {name!r} has no problems")
    n = cfg.n_samples
    prompts, rngs = [], []
    for task in tasks:
        for i in range(n):
            prompts.append(list(task.prompt_tokens))
            rngs.append(substream(cfg.seed, "eval", name, task.id, i))
    rollouts = sample_parallel(policy, prompts, cfg.sampler(), rngs, workers)
    problems = []
    for j, task in enumerate(tasks):
        texts = [policy.vocab.decode(r.tokens) for r in rollouts[j * n : (j + 1) * n]]
        verdicts = [verify(t, task.gold, cfg.verifier_profile) for t in texts]
        problems.append(ProblemResult(task.id, task.gold, verdicts, texts, 0.0))
    per_problem, score = pass_at_1([[v.correct for v in p.verdicts] for p in problems])
    for p, s in zip(problems, per_problem):
        p.score = s
    return BenchmarkResult(name, n, problems, score)


def evaluate(
    policy,
    benchmarks: Mapping[str, Sequence[Task]] | Sequence[Task],
    cfg: EvalConfig,
    n_samples: Optional[Mapping[str, int]] = None,
    workers: Optional[int] = None,
) -> EvalReport:
    """Evaluate one or more benchmarks; empty benchmarks are left out of the report.

    ``n_samples`` optionally overrides ``cfg.n_samples`` per benchmark name.
    """
    if not isinstance(benchmarks, Mapping):
        benchmarks = {"benchmark": benchmarks}
    report = EvalReport()
    for name, tasks in benchmarks.items():
        if not tasks:
            continue
        bench_cfg = cfg
        if n_samples and name in n_samples:
            bench_cfg = EvalConfig(**{**cfg.__dict__, "n_samples": n_samples[name]})
        report.benchmarks[name] = evaluate_benchmark(policy, tasks, bench_cfg, name, workers)
    return report


# -- compute accounting -------------------------------------------------------


@dataclass(frozen=True)
class BudgetSpec:
    steps: float
    batch_size: float
    rollout_n: float
    max_context_tokens: float
    dynamic_sampling: bool = False
    filter_ratio: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.filter_ratio <= 1:
            raise ConfigError(f"filter_ratio must be in (0, 1], got {self.filter_ratio}")
        for name in ("steps", "batch_size", "rollout_n", "max_context_tokens"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


def token_budget(spec: BudgetSpec) -> float:
    """Upper-bound rollout tokens: every rollout is charged the full context length.

    With dynamic sampling, only ``filter_ratio`` of generated groups survive, so
    generation is scaled up by ``1 / filter_ratio``.
    """
    tokens = spec.steps * spec.batch_size * spec.rollout_n * spec.max_context_tokens
    if spec.dynamic_sampling:
        tokens /= spec.filter_ratio
    return float(tokens)
