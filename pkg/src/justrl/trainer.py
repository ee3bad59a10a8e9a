"""Single-stage GRPO training loop with fixed hyperparameters."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import save_policy, sidecar_path
from .errors import ConfigError, JustRLError
from .grpo import ClipRange, OverlongPenaltyConfig, RolloutGroup, apply_overlong_penalty, surrogate_loss_and_grad
from .policy import ToyPolicy, forward_backward, span_windows
from .sampling import SamplerSettings, sample_parallel, substream
from .tasks import Task, generate, load_jsonl
from .verifier import PROFILES, verify
from .vocab import BOXED_OPEN, BOXED_CLOSE, DEFAULT_VOCAB

log = logging.getLogger(__name__)

TELEMETRY_HEADER = ("step", "mean_reward", "mean_entropy", "mean_response_len", "clip_fraction", "wall_ms")
FILLER_TOKENS = ("+", "-", "*", "%", "=", ".", " ", "?")
INIT_KINDS = ("format_prior", "random", "zeros")


@dataclass(frozen=True)
class TrainConfig:
    # recipe hyperparameters (full-scale values live in the paper-scale preset)
    train_batch_size: int = 32
    mini_batch_size: int = 8
    rollout_n: int = 8
    learning_rate: float = 1.5
    temperature: float = 1.0
    max_prompt_len: int = 64
    max_response_len: int = 64
    clip_low: float = 0.8
    clip_high: float = 1.28
    use_kl: bool = False
    use_entropy_bonus: bool = False
    scale_adv_by_std: bool = True
    verifier_profile: str = "strict"
    overlong_enabled: bool = False
    overlong_window: int = 16
    # run control
    total_steps: int = 300
    seed: int = 0
    checkpoint_every: int = 50
    keep_checkpoints: int = 3
    record_wall_ms: bool = False
    # toy policy and its starting point
    context_width: int = 8
    embed_dim: int = 16
    init: str = "format_prior"
    init_scale: float = 0.5
    warm_start_steps: int = 500
    warm_start_lr: float = 3.0
    warm_start_filler_max: int = 3
    # task source
    task_family: str = "digit_copy"
    task_difficulty: int = 1
    task_count: int = 200
    task_file: str = ""

    def __post_init__(self) -> None:
        if self.use_kl:
            raise ConfigError("use_kl must be false: the recipe has no KL loss")
        if self.use_entropy_bonus:
            raise ConfigError("use_entropy_bonus must be false: the recipe has no entropy regularization")
        for name in ("train_batch_size", "mini_batch_size", "max_prompt_len", "max_response_len", "total_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.rollout_n < 2:
            raise ConfigError(f"rollout_n must be >= 2 for group normalization, got {self.rollout_n}")
        if self.train_batch_size % self.mini_batch_size:
            raise ConfigError(
                f"mini_batch_size ({self.mini_batch_size}) must divide train_batch_size ({self.train_batch_size})"
            )
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.verifier_profile not in PROFILES:
            raise ConfigError(f"verifier_profile must be one of {sorted(PROFILES)}")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}")
        if self.checkpoint_every < 1 or self.keep_checkpoints < 1:
            raise ConfigError("checkpoint_every and keep_checkpoints must be >= 1")
        # constructing these validates their ranges
        self.sampler(0)
        self.clip
        self.overlong

    @property
    def clip(self) -> ClipRange:
        return ClipRange(self.clip_low, self.clip_high)

    @property
    def overlong(self) -> OverlongPenaltyConfig:
        return OverlongPenaltyConfig(self.overlong_enabled, self.overlong_window, self.max_response_len)

    @property
    def updates_per_step(self) -> int:
        return self.train_batch_size // self.mini_batch_size

    def sampler(self, seed: int) -> SamplerSettings:
        return SamplerSettings(self.temperature, 1.0, self.max_response_len, seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS: dict[str, dict] = {
    "desk": {},
    "paper-scale": {
        "train_batch_size": 256,
        "mini_batch_size": 64,
        "rollout_n": 8,
        "learning_rate": 1e-6,
        "temperature": 1.0,
        "max_prompt_len": 1000,
        "max_response_len": 15000,
        "clip_low": 0.8,
        "clip_high": 1.28,
        "overlong_window": 4096,
        "total_steps": 4380,
    },
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class TelemetryRecord:
    step: int
    mean_reward: float
    mean_entropy: float
    mean_response_len: float
    clip_fraction: float
    wall_ms: int

    def csv_row(self) -> list[str]:
        return [
            str(self.step),
            repr(self.mean_reward),
            repr(self.mean_entropy),
            repr(self.mean_response_len),
            repr(self.clip_fraction),
            str(self.wall_ms),
        ]


def read_telemetry(path: str | Path) -> list[TelemetryRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TELEMETRY_HEADER:
            raise ConfigError(f"expected header {','.join(TELEMETRY_HEADER)}", path=str(path), line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                step, r, e, n, c, w = row
                rows.append(TelemetryRecord(int(step), float(r), float(e), float(n), float(c), int(w)))
            except ValueError as exc:
                raise ConfigError(f"malformed telemetry row ({exc})", path=str(path), line=lineno) from exc
        return rows


# -- task order ---------------------------------------------------------------


def batch_for_step(tasks: Sequence[Task], step: int, cfg: TrainConfig) -> list[Task]:
    """Tasks for 1-based ``step``: consecutive slices of a reshuffled-per-epoch stream."""
    n = len(tasks)
    if n == 0:
        raise ConfigError("task source is empty")
    out = []
    start = (step - 1) * cfg.train_batch_size
    perms: dict[int, np.ndarray] = {}
    for pos in range(start, start + cfg.train_batch_size):
        epoch, offset = divmod(pos, n)
        if epoch not in perms:
            perms[epoch] = substream(cfg.seed, "shuffle", epoch).permutation(n)
        out.append(tasks[perms[epoch][offset]])
    return out


def load_tasks(cfg: TrainConfig, diagnostics: Optional[list[str]] = None) -> list[Task]:
    if cfg.task_file:
        return load_jsonl(cfg.task_file, DEFAULT_VOCAB, cfg.max_prompt_len, diagnostics)
    return generate(cfg.task_family, cfg.task_difficulty, cfg.task_count, cfg.seed, DEFAULT_VOCAB, cfg.max_prompt_len)


# -- base policy ---------------------------------------------------------------


def format_demonstration(rng: np.random.Generator, filler_max: int, vocab=DEFAULT_VOCAB) -> list[int]:
    """Random filler, then ``\\boxed{<random digit>}`` and EOS: format without answers."""
    filler_ids = [vocab.id(t) for t in FILLER_TOKENS]
    n_fill = int(rng.integers(0, filler_max + 1))
    filler = [filler_ids[i] for i in rng.integers(0, len(filler_ids), size=n_fill)]
    digit = vocab.digit_ids[int(rng.integers(0, 10))]
    return filler + [vocab.id(BOXED_OPEN), digit, vocab.id(BOXED_CLOSE), vocab.eos]


def make_base_policy(cfg: TrainConfig, tasks: Sequence[Task]) -> ToyPolicy:
    """Initial policy for a run.

    ``format_prior`` stands in for a pretrained backbone: a short supervised
    pass on demonstrations that follow the answer format but carry answers
    drawn at random, so the starting policy boxes an answer without knowing it.
    """
    if cfg.init == "zeros":
        return ToyPolicy.zeros(DEFAULT_VOCAB, cfg.context_width, cfg.embed_dim)
    policy = ToyPolicy.random(
        int(substream(cfg.seed, "init").integers(2**63)), DEFAULT_VOCAB, cfg.context_width, cfg.embed_dim, cfg.init_scale
    )
    if cfg.init == "random" or cfg.warm_start_steps == 0:
        return policy
    params = policy.params.copy()
    for step in range(cfg.warm_start_steps):
        rng = substream(cfg.seed, "warm-start", step)
        picks = rng.integers(0, len(tasks), size=cfg.train_batch_size)
        seqs, starts = [], []
        for i in picks:
            prompt = list(tasks[int(i)].prompt_tokens)
            demo = format_demonstration(rng, cfg.warm_start_filler_max)[: cfg.max_response_len]
            seqs.append(np.asarray(prompt + demo))
            starts.append(len(prompt))
        idx, mask, targets = span_windows(seqs, starts, cfg.context_width)
        coeffs = np.full(len(targets), 1.0 / len(targets))
        _, g = forward_backward(policy.with_params(params), idx, mask, targets, coeffs)
        params = params + cfg.warm_start_lr * g
    return policy.with_params(params)


# -- one step --------------------------------------------------------------------


@dataclass
class StepOutput:
    policy: ToyPolicy
    record: TelemetryRecord
    groups: list[RolloutGroup]


def collect_groups(
    policy: ToyPolicy, tasks_batch: Sequence[Task], cfg: TrainConfig, step: int, workers: Optional[int] = None
) -> tuple[list[RolloutGroup], dict]:
    g = cfg.rollout_n
    prompts, rngs = [], []
    for b, task in enumerate(tasks_batch):
        for i in range(g):
            prompts.append(list(task.prompt_tokens))
            rngs.append(substream(cfg.seed, "rollout", step, b, i))
    rollouts = sample_parallel(policy, prompts, cfg.sampler(cfg.seed), rngs, workers)

    vocab = policy.vocab
    overlong = cfg.overlong
    groups = []
    rewards_all, ent_sum, n_tok = [], 0.0, 0
    for b, task in enumerate(tasks_batch):
        chunk = rollouts[b * g : (b + 1) * g]
        rewards = []
        for ro in chunk:
            base = verify(vocab.decode(ro.tokens), task.gold, cfg.verifier_profile).reward
            rewards.append(apply_overlong_penalty(base, len(ro.tokens), overlong))
            ent_sum += float(ro.entropies.sum())
            n_tok += len(ro.tokens)
        group = RolloutGroup(
            prompt_id=task.id,
            prompt_tokens=list(task.prompt_tokens),
            responses=[ro.tokens for ro in chunk],
            old_logprobs=[ro.logprobs for ro in chunk],
            rewards=np.asarray(rewards),
            truncated=[ro.truncated for ro in chunk],
        ).normalize(cfg.scale_adv_by_std)
        groups.append(group)
        rewards_all.extend(rewards)
    stats = {
        "mean_reward": float(np.mean(rewards_all)),
        "mean_entropy": ent_sum / n_tok,
        "mean_response_len": n_tok / len(rollouts),
    }
    return groups, stats


def train_step(
    policy: ToyPolicy, tasks_batch: Sequence[Task], cfg: TrainConfig, step: int, workers: Optional[int] = None
) -> StepOutput:
    """Collect ``rollout_n`` responses per task, then run the mini-batch updates.

    Telemetry describes the collection phase, i.e. the pre-update policy.
    """
    if len(tasks_batch) == 0:
        raise ConfigError("train_step needs a non-empty batch")
    if len(tasks_batch) % cfg.mini_batch_size:
        raise ConfigError(f"batch of {len(tasks_batch)} is not a multiple of mini_batch_size={cfg.mini_batch_size}")
    t0 = time.perf_counter()
    groups, stats = collect_groups(policy, tasks_batch, cfg, step, workers)

    params = policy.params
    clip = cfg.clip
    n_clipped, n_tokens = 0.0, 0
    mb = cfg.mini_batch_size
    for start in range(0, len(groups), mb):
        current = policy.with_params(params)
        res = surrogate_loss_and_grad(current, groups[start : start + mb], clip)
        n_clipped += res.clip_fraction * res.n_tokens
        n_tokens += res.n_tokens
        params = params - cfg.learning_rate * res.grad

    wall = int(round((time.perf_counter() - t0) * 1000)) if cfg.record_wall_ms else 0
    record = TelemetryRecord(
        step=step,
        mean_reward=stats["mean_reward"],
        mean_entropy=stats["mean_entropy"],
        mean_response_len=stats["mean_response_len"],
        clip_fraction=n_clipped / n_tokens if n_tokens else 0.0,
        wall_ms=wall,
    )
    return StepOutput(policy.with_params(params), record, groups)


# -- full run ----------------------------------------------------------------------


class TrainingIOError(JustRLError):
    """Writing run artifacts failed; ``resume_from`` names the newest usable checkpoint."""

    def __init__(self, message: str, resume_from: Optional[Path]):
        super().__init__(message + (f" (resume from {resume_from})" if resume_from else ""))
        self.resume_from = resume_from


@dataclass
class TrainResult:
    policy: ToyPolicy
    telemetry: list[TelemetryRecord]
    checkpoints: list[Path]
    best_checkpoint: Optional[Path] = None


def checkpoint_name(step: int) -> str:
    return f"step_{step:06d}.bin"


def planned_checkpoints(cfg: TrainConfig, start_step: int = 0) -> list[int]:
    """Steps whose checkpoints survive pruning: the last ``keep_checkpoints`` save points."""
    saves = [s for s in range(start_step + 1, cfg.total_steps + 1) if s % cfg.checkpoint_every == 0]
    if not saves or saves[-1] != cfg.total_steps:
        saves.append(cfg.total_steps)
    return saves[-cfg.keep_checkpoints :]


def train(
    policy: ToyPolicy,
    tasks: Sequence[Task],
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None,
    start_step: int = 0,
    workers: Optional[int] = None,
) -> TrainResult:
    """Run steps ``start_step + 1 .. total_steps``.

    With ``out_dir`` set, telemetry is appended to ``telemetry.csv`` row by row
    and checkpoints go to ``checkpoints/``. Resuming from a checkpoint of step
    ``s`` (pass ``start_step=s``) reproduces the uninterrupted run's tail exactly,
    because every random stream is keyed by (seed, step, ...) rather than by
    generator state.
    """
    if cfg.total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= start_step <= cfg.total_steps:
        raise ConfigError(f"start_step {start_step} outside [0, {cfg.total_steps}]")
    if len(tasks) == 0:
        raise ConfigError("task source is empty")

    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out / "checkpoints" if out else None
    telemetry_path = out / "telemetry.csv" if out else None
    last_ckpt: Optional[Path] = None
    if out:
        try:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            if start_step == 0 or not telemetry_path.exists():
                telemetry_path.write_text(",".join(TELEMETRY_HEADER) + "\n")
            else:
                _truncate_telemetry(telemetry_path, start_step)
        except OSError as exc:
            raise TrainingIOError(f"cannot prepare {out}: {exc}", None) from exc

    records: list[TelemetryRecord] = []
    saved: list[Path] = []
    best_reward = -np.inf
    best_path = ckpt_dir / "best.bin" if ckpt_dir else None
    for step in range(start_step + 1, cfg.total_steps + 1):
        batch = batch_for_step(tasks, step, cfg)
        result = train_step(policy, batch, cfg, step, workers)
        policy = result.policy
        records.append(result.record)
        if out is None:
            continue
        try:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerow(result.record.csv_row())
            with open(telemetry_path, "a") as fh:
                fh.write(buf.getvalue())
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                meta = {"step": step, "config": cfg.to_dict(), "mean_reward": result.record.mean_reward}
                last_ckpt = save_policy(policy, ckpt_dir / checkpoint_name(step), meta)
                saved.append(last_ckpt)
                if result.record.mean_reward > best_reward:
                    best_reward = result.record.mean_reward
                    shutil.copyfile(last_ckpt, best_path)
                    shutil.copyfile(sidecar_path(last_ckpt), sidecar_path(best_path))
                while len(saved) > cfg.keep_checkpoints:
                    old = saved.pop(0)
                    old.unlink(missing_ok=True)
                    sidecar_path(old).unlink(missing_ok=True)
        except OSError as exc:
            raise TrainingIOError(f"step {step}: {exc}", last_ckpt) from exc
        log.info(
            "step %d reward %.3f entropy %.3f len %.1f",
            step,
            result.record.mean_reward,
            result.record.mean_entropy,
            result.record.mean_response_len,
        )
    return TrainResult(policy, records, saved, best_path if saved else None)


def _truncate_telemetry(path: Path, keep_through: int) -> None:
    lines = path.read_text().splitlines(keepends=True)
    kept = [lines[0]] + [ln for ln in lines[1:] if ln.strip() and int(ln.split(",", 1)[0]) <= keep_through]
    path.write_text("".join(kept))
