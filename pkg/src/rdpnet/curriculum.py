"""Easy-to-hard training strategy: per-sample difficulty scores from a
warmup model's detection loss, a 4:2:3 easy/medium/hard partition, the
staged epoch schedule, the e^-loss random-sampling baseline, and the
sample-fraction arithmetic behind the strategy's FLOPs savings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .losses import LossConfig
from .tensor import Rng

DEFAULT_RATIO = (4, 2, 3)


@dataclass(frozen=True)
class DifficultyScore:
    sample_id: str
    loss: float


@dataclass
class SubsetSplit:
    easy: list[str]
    medium: list[str]
    hard: list[str]

    def all_ids(self) -> list[str]:
        return self.easy + self.medium + self.hard


@dataclass(frozen=True)
class StageSchedule:
    warmup_end: int = 30
    medium_start: int = 60
    hard_start: int = 90
    total_epochs: int = 200
    cumulative: bool = True

    def validate(self) -> None:
        if not (0 < self.warmup_end <= self.medium_start <= self.hard_start <= self.total_epochs):
            raise ConfigError(
                "schedule must satisfy 0 < warmup_end <= medium_start <= hard_start "
                f"<= total_epochs, got ({self.warmup_end}, {self.medium_start}, "
                f"{self.hard_start}, {self.total_epochs})"
            )


def score_samples(model, manifest, loss_config: LossConfig, batch_size: int = 16,
                  sample_store=None) -> list[DifficultyScore]:
    """Eval-mode hybrid loss per sample, ascending by (loss, id).

    Delegates to the shared inference routine so scores are bitwise equal
    to the per-sample losses the trainer's evaluate() reports.
    """
    from .inference import per_sample_losses

    losses = per_sample_losses(model, manifest, loss_config, batch_size=batch_size,
                               sample_store=sample_store)
    scores = [DifficultyScore(sample_id=sid, loss=loss) for sid, loss in losses]
    scores.sort(key=lambda s: (s.loss, s.sample_id))
    return scores


def split(scores: list[DifficultyScore], ratio=DEFAULT_RATIO) -> SubsetSplit:
    """Partition ascending scores into easy/medium/hard subsets.

    |easy| = floor(r0*n/sum), |medium| = floor(r1*n/sum), remainder hard;
    ties in loss are already broken by id in the score ordering.
    """
    r0, r1, r2 = (int(r) for r in ratio)
    if min(r0, r1, r2) <= 0:
        raise ConfigError(f"ratio parts must be positive, got {ratio}")
    n = len(scores)
    if n < 9:
        raise DataError(f"need at least 9 scored samples to split, got {n}")
    ordered = sorted(scores, key=lambda s: (s.loss, s.sample_id))
    total = r0 + r1 + r2
    n_easy = (r0 * n) // total
    n_medium = (r1 * n) // total
    ids = [s.sample_id for s in ordered]
    return SubsetSplit(
        easy=ids[:n_easy],
        medium=ids[n_easy : n_easy + n_medium],
        hard=ids[n_easy + n_medium :],
    )


def active_set(epoch: int, schedule: StageSchedule, subset_split: SubsetSplit) -> list[str]:
    """Sample ids trained at the given epoch.

    Warmup epochs use the full dataset (this is the pre-training that also
    produces the difficulty scores). Cumulative staging then feeds easy,
    easy+medium, and finally the full dataset again; with cumulative off,
    each stage uses its own subset alone.
    """
    schedule.validate()
    if not 0 <= epoch < schedule.total_epochs:
        raise ConfigError(
            f"epoch {epoch} outside [0, {schedule.total_epochs})"
        )
    if epoch < schedule.warmup_end:
        return subset_split.all_ids()
    if epoch < schedule.medium_start:
        return list(subset_split.easy)
    if schedule.cumulative:
        if epoch < schedule.hard_start:
            return subset_split.easy + subset_split.medium
        return subset_split.all_ids()
    if epoch < schedule.hard_start:
        return list(subset_split.medium)
    return list(subset_split.hard)


def expected_sample_fraction(schedule: StageSchedule, ratio=DEFAULT_RATIO) -> float:
    """Mean of |active_set|/n over all epochs, computed exactly from the
    ratio (floor effects of a concrete n are ignored)."""
    schedule.validate()
    r0, r1, r2 = (int(r) for r in ratio)
    total_r = r0 + r1 + r2
    easy = Fraction(r0, total_r)
    medium = Fraction(r1, total_r)
    hard = Fraction(r2, total_r)
    warmup = schedule.warmup_end
    stage_easy = schedule.medium_start - schedule.warmup_end
    stage_medium = schedule.hard_start - schedule.medium_start
    tail = schedule.total_epochs - schedule.hard_start
    if schedule.cumulative:
        acc = warmup * Fraction(1) + stage_easy * easy + stage_medium * (easy + medium) + tail
    else:
        acc = warmup * Fraction(1) + stage_easy * easy + stage_medium * medium + tail * hard
    return float(acc / schedule.total_epochs)


def sampling_weights(scores: list[DifficultyScore]) -> np.ndarray:
    """Selection weight e^-loss per score (unnormalized)."""
    return np.array([math.exp(-s.loss) for s in scores], dtype=np.float64)


def random_sampling_epoch(scores: list[DifficultyScore], fraction: float,
                          rng: Rng, epoch: int) -> list[str]:
    """One epoch's weighted draw without replacement of round(fraction*n)
    ids, weight proportional to e^-loss. The draw uses a child stream
    derived from (rng, epoch), so any epoch's selection is reproducible
    independently of the others (exact resume)."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    ids = [s.sample_id for s in scores]
    weights = sampling_weights(scores)
    k = int(round(fraction * len(ids)))
    k = max(1, min(k, len(ids)))
    return rng.derive("random-sampling", epoch).choice_weighted(ids, k, weights)


def random_sampling_baseline(scores: list[DifficultyScore], fraction: float,
                             rng: Rng, epochs: int = 1) -> list[list[str]]:
    """Per-epoch weighted e^-loss selections for the given number of epochs."""
    return [random_sampling_epoch(scores, fraction, rng, e) for e in range(epochs)]


# ---------------------------------------------------------------------------
# file formats


def write_difficulty_csv(scores: list[DifficultyScore], path) -> None:
    ordered = sorted(scores, key=lambda s: (s.loss, s.sample_id))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "loss"])
        for s in ordered:
            writer.writerow([s.sample_id, repr(s.loss)])


def read_difficulty_csv(path) -> list[DifficultyScore]:
    path = Path(path)
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["sample_id", "loss"]:
            raise DataError(f"{path}: expected header 'sample_id,loss', got {header}")
        out = []
        for row in reader:
            if len(row) != 2:
                raise DataError(f"{path}: malformed row {row}")
            out.append(DifficultyScore(sample_id=row[0], loss=float(row[1])))
    return out


def write_split_file(subset_split: SubsetSplit, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for section, ids in (
            ("easy", subset_split.easy),
            ("medium", subset_split.medium),
            ("hard", subset_split.hard),
        ):
            f.write(f"[{section}]\n")
            for sid in ids:
                f.write(f"{sid}\n")


def read_split_file(path) -> SubsetSplit:
    path = Path(path)
    sections: dict[str, list[str]] = {"easy": [], "medium": [], "hard": []}
    current = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1]
                if name not in sections:
                    raise DataError(f"{path}:{lineno}: unknown section {name!r}")
                current = name
            elif current is None:
                raise DataError(f"{path}:{lineno}: id before any section header")
            else:
                sections[current].append(line)
    return SubsetSplit(easy=sections["easy"], medium=sections["medium"], hard=sections["hard"])
