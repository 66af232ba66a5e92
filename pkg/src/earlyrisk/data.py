"""Clip annotations, feature sequences, synthetic incident generation, splits.

A clip is a fixed-rate frame sequence with a per-frame global feature
vector and K per-frame local feature slots (one slot per candidate
object, with a presence mask). Positive clips contain an incident whose
first frame is ``accident_start_T`` (1-based); the synthetic generator
plants a class-specific precursor direction into one local slot, with
magnitude growing as the incident approaches, so that how early a model
*can* anticipate is controlled by ``precursor_onset_frames``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError

RISK_CLASSES = ("cyclist", "pedestrian", "vehicle")

# Per-frame probability that a local slot holds an object. Fixed: the
# experiments vary signal via noise_sigma / onset, not object density.
_PRESENCE_RATE = 0.85


@dataclass(frozen=True)
class ClipAnnotation:
    clip_id: str
    label: str  # "positive" | "negative"
    num_frames: int
    frame_rate_F: float
    accident_start_T: int | None = None
    risk_class: str | None = None

    def validate(self) -> None:
        where = f"clip {self.clip_id!r}"
        if self.label not in ("positive", "negative"):
            raise DataError(f"{where}: label must be positive|negative, got {self.label!r}")
        if self.num_frames < 1:
            raise DataError(f"{where}: num_frames must be >= 1, got {self.num_frames}")
        if self.frame_rate_F <= 0:
            raise DataError(f"{where}: frame_rate_F must be > 0, got {self.frame_rate_F}")
        if self.label == "positive":
            if self.accident_start_T is None:
                raise DataError(f"{where}: positive clip has no accident_start_T")
            if not 1 <= self.accident_start_T <= self.num_frames:
                raise DataError(
                    f"{where}: accident_start_T {self.accident_start_T} outside "
                    f"1..{self.num_frames}"
                )
            if self.risk_class is not None and self.risk_class not in RISK_CLASSES:
                raise DataError(f"{where}: unknown risk_class {self.risk_class!r}")
        else:
            if self.accident_start_T is not None:
                raise DataError(f"{where}: negative clip carries accident_start_T")
            if self.risk_class is not None:
                raise DataError(f"{where}: negative clip carries risk_class")


@dataclass(eq=False)
class FeatureSequence:
    clip_id: str
    global_feats: np.ndarray  # (num_frames, D_g)
    local_feats: np.ndarray  # (num_frames, K, D_l)
    local_mask: np.ndarray  # (num_frames, K) bool

    @property
    def num_frames(self) -> int:
        return self.global_feats.shape[0]

    def validate(self) -> None:
        where = f"clip {self.clip_id!r}"
        T = self.global_feats.shape[0]
        if self.global_feats.ndim != 2:
            raise DataError(f"{where}: global_feats must be 2-D")
        if self.local_feats.ndim != 3 or self.local_feats.shape[0] != T:
            raise DataError(f"{where}: local_feats must be (num_frames, K, D_l)")
        if self.local_mask.shape != self.local_feats.shape[:2]:
            raise DataError(f"{where}: local_mask shape mismatches local_feats")
        if np.any(self.local_feats[~self.local_mask] != 0.0):
            raise DataError(f"{where}: masked-out local rows must be all-zero")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureSequence)
            and self.clip_id == other.clip_id
            and np.array_equal(self.global_feats, other.global_feats)
            and np.array_equal(self.local_feats, other.local_feats)
            and np.array_equal(self.local_mask, other.local_mask)
        )


@dataclass(eq=False)
class Clip:
    annotation: ClipAnnotation
    features: FeatureSequence

    def validate(self) -> None:
        self.annotation.validate()
        self.features.validate()
        if self.annotation.clip_id != self.features.clip_id:
            raise DataError(
                f"clip {self.annotation.clip_id!r}: features belong to "
                f"{self.features.clip_id!r}"
            )
        if self.annotation.num_frames != self.features.num_frames:
            raise DataError(
                f"clip {self.annotation.clip_id!r}: annotation says "
                f"{self.annotation.num_frames} frames, features have "
                f"{self.features.num_frames}"
            )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Clip)
            and self.annotation == other.annotation
            and self.features == other.features
        )


@dataclass(eq=False)
class Dataset:
    clips: list[Clip]
    frame_rate_F: float
    num_classes: int

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)

    @property
    def annotations(self) -> list[ClipAnnotation]:
        return [c.annotation for c in self.clips]

    def clip_ids(self) -> set[str]:
        return {c.annotation.clip_id for c in self.clips}

    def positives(self) -> list[Clip]:
        return [c for c in self.clips if c.annotation.label == "positive"]

    def validate(self) -> None:
        seen = set()
        for clip in self.clips:
            clip.validate()
            cid = clip.annotation.clip_id
            if cid in seen:
                raise DataError(f"clip {cid!r}: duplicate clip_id")
            seen.add(cid)
            if clip.annotation.frame_rate_F != self.frame_rate_F:
                raise DataError(
                    f"clip {cid!r}: frame_rate_F {clip.annotation.frame_rate_F} "
                    f"differs from dataset rate {self.frame_rate_F}"
                )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.frame_rate_F == other.frame_rate_F
            and self.num_classes == other.num_classes
            and self.clips == other.clips
        )


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    split_sizes: dict
    frame_rate_F: float
    num_classes: int

    def validate(self, total: int | None = None) -> None:
        if any(v < 0 for v in self.split_sizes.values()):
            raise DataError("split sizes must be nonnegative")
        if total is not None and sum(self.split_sizes.values()) != total:
            raise DataError(
                f"split sizes {self.split_sizes} do not sum to clip count {total}"
            )


@dataclass(frozen=True)
class SyntheticConfig:
    num_clips: int
    positive_fraction: float = 0.5
    num_frames: int = 100
    frame_rate_F: float = 20.0
    D_g: int = 8
    D_l: int = 8
    K: int = 3
    precursor_onset_frames: int = 60
    precursor_growth_tau: float = 25.0
    noise_sigma: float = 0.25
    num_classes: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.num_clips < 1:
            raise ConfigError(f"num_clips must be >= 1, got {self.num_clips}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(
                f"positive_fraction must be in [0, 1], got {self.positive_fraction}"
            )
        if self.num_frames < 1:
            raise ConfigError(f"num_frames must be >= 1, got {self.num_frames}")
        if self.frame_rate_F <= 0:
            raise ConfigError(f"frame_rate_F must be > 0, got {self.frame_rate_F}")
        for name in ("D_g", "D_l", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.precursor_onset_frames < self.num_frames:
            raise ConfigError(
                f"precursor_onset_frames must be in 0..num_frames-1, got "
                f"{self.precursor_onset_frames}"
            )
        if self.precursor_growth_tau <= 0:
            raise ConfigError(
                f"precursor_growth_tau must be > 0, got {self.precursor_growth_tau}"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 1 <= self.num_classes <= len(RISK_CLASSES):
            raise ConfigError(
                f"num_classes must be in 1..{len(RISK_CLASSES)}, got {self.num_classes}"
            )


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Deterministic synthetic dataset of incident and background clips.

    Negatives are pure N(0, noise_sigma^2) features. Each positive gets a
    unit precursor direction (one per risk class) added to one local slot
    for frames t >= T - precursor_onset_frames, scaled by
    exp(-(T - t) / precursor_growth_tau); the incident starts at the last
    frame (T = num_frames). Positive count is round(num_clips *
    positive_fraction), half away from zero.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    T = config.num_frames
    n_pos = int(math.floor(config.num_clips * config.positive_fraction + 0.5))

    directions = rng.normal(size=(config.num_classes, config.D_l))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    is_positive = np.zeros(config.num_clips, dtype=bool)
    is_positive[:n_pos] = True
    rng.shuffle(is_positive)

    onset_start = T - config.precursor_onset_frames  # first 1-based frame with signal
    frames = np.arange(1, T + 1)
    growth = np.exp(-(T - frames) / config.precursor_growth_tau)
    growth[frames < onset_start] = 0.0

    width = len(str(config.num_clips - 1))
    clips: list[Clip] = []
    for i in range(config.num_clips):
        clip_id = f"clip_{i:0{width}d}"
        global_feats = rng.normal(0.0, config.noise_sigma, size=(T, config.D_g))
        local_feats = rng.normal(
            0.0, config.noise_sigma, size=(T, config.K, config.D_l)
        )
        local_mask = rng.random((T, config.K)) < _PRESENCE_RATE
        if is_positive[i]:
            slot = int(rng.integers(config.K))
            cls_idx = int(rng.integers(config.num_classes))
            local_feats[:, slot, :] += growth[:, None] * directions[cls_idx]
            local_mask[frames >= onset_start, slot] = True
            annotation = ClipAnnotation(
                clip_id=clip_id,
                label="positive",
                num_frames=T,
                frame_rate_F=config.frame_rate_F,
                accident_start_T=T,
                risk_class=RISK_CLASSES[cls_idx],
            )
        else:
            annotation = ClipAnnotation(
                clip_id=clip_id,
                label="negative",
                num_frames=T,
                frame_rate_F=config.frame_rate_F,
            )
        local_feats[~local_mask] = 0.0
        clips.append(
            Clip(
                annotation,
                FeatureSequence(clip_id, global_feats, local_feats, local_mask),
            )
        )
    return Dataset(clips, config.frame_rate_F, config.num_classes)


def split_dataset(
    dataset: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified, deterministic train/val/test split.

    Strata are (label, risk_class) groups; within each stratum clips are
    shuffled by the seeded generator and cut at rounded cumulative
    fractions, so each split's stratum count is within one clip of the
    exact proportion.
    """
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    if len(fractions) != 3:
        raise ConfigError(f"expected 3 fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got sum {sum(fractions)!r}")

    strata: dict[tuple, list[int]] = {}
    for idx, clip in enumerate(dataset.clips):
        key = (clip.annotation.label, clip.annotation.risk_class or "")
        strata.setdefault(key, []).append(idx)

    # Telescoping cumulative rounding: cut each stratum at
    # round(C_s * c_j) - round(C_prev * c_j), where C_s is the cumulative
    # clip count and c_j the cumulative fraction. Summed over strata the
    # cuts telescope, so global split sizes equal round(n * c_j) exactly
    # while each stratum stays within a clip of its proportional share.
    def half_up(x: float) -> int:
        return int(math.floor(x + 0.5))

    cum_fracs = []
    acc = 0.0
    for frac in fractions:
        acc += frac
        cum_fracs.append(acc)
    cum_fracs[-1] = 1.0

    rng = np.random.default_rng(seed)
    buckets: tuple[list[int], ...] = ([], [], [])
    seen_before = 0
    for key in sorted(strata):
        indices = np.array(strata[key])
        rng.shuffle(indices)
        n = len(indices)
        total = seen_before + n
        start = 0
        for which, c in enumerate(cum_fracs):
            stop = half_up(total * c) - half_up(seen_before * c)
            stop = min(n, max(start, stop))
            buckets[which].extend(indices[start:stop].tolist())
            start = stop
        seen_before = total

    def subset(indices: Iterable[int]) -> Dataset:
        chosen = sorted(indices)
        return Dataset(
            [dataset.clips[i] for i in chosen], dataset.frame_rate_F, dataset.num_classes
        )

    return subset(buckets[0]), subset(buckets[1]), subset(buckets[2])
