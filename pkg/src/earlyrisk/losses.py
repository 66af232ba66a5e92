"""Anticipation losses: EL, LEA and AdaLEA penalty schedules.

All three weight the per-frame cross-entropy of a positive clip by
``alpha = exp(-max(0, d - offset))`` where ``d = T - t`` is the number of
frames remaining until the incident:

* EL:     offset 0 (static; only frames near the incident carry weight)
* LEA:    offset lambda * (e - 1), advancing linearly with the epoch e
* AdaLEA: offset F * Phi(e-1) + gamma, where Phi(e-1) is the previous
  epoch's validated ATTC in seconds and F the frame rate

so the saturation frontier (alpha == 1) moves earlier as training
progresses -- linearly for LEA, adaptively for AdaLEA. Negative clips use
plain cross-entropy toward 0 on every frame. At e=1 or lambda=0, LEA is
identical to EL; AdaLEA with Phi=0 and gamma=0 is identical to EL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import RISK_CLASSES, ClipAnnotation
from .errors import ConfigError

VARIANTS = ("EL", "LEA", "AdaLEA")

# Risk rates are clamped into [RISK_EPS, 1 - RISK_EPS] before taking logs.
RISK_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    variant: str = "EL"
    lambda_: float = 3.0  # frames advanced per epoch (LEA)
    gamma: float = 5.0  # frame slack beyond the validated horizon (AdaLEA)
    frame_rate_F: float = 20.0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.frame_rate_F <= 0:
            raise ConfigError(f"frame_rate_F must be > 0, got {self.frame_rate_F}")


class EpochContext:
    """Epoch number and the previous epoch's validated ATTC.

    Reads of ``phi_prev`` are counted so tests (and the trainer) can
    assert that EL/LEA never consult the ATTC feedback.
    """

    __slots__ = ("epoch", "_phi_prev", "phi_reads")

    def __init__(self, epoch: int, phi_prev: float = 0.0):
        if epoch < 1:
            raise ValueError(f"epoch must be >= 1, got {epoch}")
        if phi_prev < 0:
            raise ValueError(f"phi_prev must be >= 0, got {phi_prev}")
        self.epoch = epoch
        self._phi_prev = float(phi_prev)
        self.phi_reads = 0

    @property
    def phi_prev(self) -> float:
        self.phi_reads += 1
        return self._phi_prev

    def peek_phi(self) -> float:
        """The stored ATTC without touching the read counter (for logs)."""
        return self._phi_prev

    def __repr__(self):
        return f"EpochContext(epoch={self.epoch}, phi_prev={self._phi_prev})"


def _sat_exp(d: float, offset: float) -> float:
    return math.exp(-max(0.0, d - offset))


def el_weight(d: float) -> float:
    """Static penalty weight exp(-d) for a frame d frames before the incident."""
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    return _sat_exp(d, 0.0)


def lea_weight(d: float, e: int, lambda_: float) -> float:
    """exp(-max(0, d - lambda*(e-1))): the frontier advances lambda frames/epoch."""
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    if e < 1:
        raise ValueError(f"e must be >= 1, got {e}")
    if lambda_ < 0:
        raise ValueError(f"lambda must be >= 0, got {lambda_}")
    return _sat_exp(d, lambda_ * (e - 1))


def adalea_weight(d: float, e: int, F: float, phi_prev: float, gamma: float) -> float:
    """exp(-max(0, d - F*phi_prev - gamma)): frontier at the validated horizon.

    Saturates to exactly 1 when d <= F * phi_prev + gamma.
    """
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    if e < 1:
        raise ValueError(f"e must be >= 1, got {e}")
    if F <= 0:
        raise ValueError(f"F must be > 0, got {F}")
    if phi_prev < 0:
        raise ValueError(f"phi_prev must be >= 0, got {phi_prev}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return _sat_exp(d, F * phi_prev + gamma)


def frame_weights(T: int, config: LossConfig, ctx: EpochContext | None) -> np.ndarray:
    """Column of per-frame weights alpha(d) for frames t = 1..T (d = T - t)."""
    if config.variant == "EL":
        w = [el_weight(T - t) for t in range(1, T + 1)]
    elif config.variant == "LEA":
        e = ctx.epoch if ctx is not None else 1
        w = [lea_weight(T - t, e, config.lambda_) for t in range(1, T + 1)]
    else:
        e = ctx.epoch if ctx is not None else 1
        phi = ctx.phi_prev if ctx is not None else 0.0
        w = [
            adalea_weight(T - t, e, config.frame_rate_F, phi, config.gamma)
            for t in range(1, T + 1)
        ]
    return np.array(w).reshape(T, 1)


def positive_clip_loss(
    r: ad.Tensor, T: int, config: LossConfig, ctx: EpochContext | None = None
) -> ad.Tensor:
    """sum_{t=1..T} -alpha(T - t) * log(r_t) over one risk channel.

    ``r`` is a column of risk rates (rows = frames); frames after T, if
    any, do not contribute. Rates are clamped to [eps, 1 - eps].
    """
    rows, cols = r.data.shape
    if cols != 1:
        raise ValueError(f"positive_clip_loss expects a single channel, got {cols}")
    if not 1 <= T <= rows:
        raise ValueError(f"accident frame T={T} outside 1..{rows}")
    r_obs = ad.slice_rows(r, 0, T) if T < rows else r
    weights = frame_weights(T, config, ctx)
    logs = ad.log(ad.clamp(r_obs, RISK_EPS, 1.0 - RISK_EPS))
    return ad.sum_all(ad.mul_const(logs, -weights))


def negative_clip_loss(r: ad.Tensor) -> ad.Tensor:
    """Standard cross-entropy toward 0: sum_t -log(1 - r_t) on all frames."""
    if r.data.shape[1] != 1:
        raise ValueError(f"negative_clip_loss expects a single channel, got {r.data.shape[1]}")
    one_minus = ad.scale_shift(ad.clamp(r, RISK_EPS, 1.0 - RISK_EPS), -1.0, 1.0)
    return ad.scale_shift(ad.sum_all(ad.log(one_minus)), -1.0, 0.0)


def batch_loss(
    risk_outputs: Sequence[ad.Tensor],
    annotations: Sequence[ClipAnnotation],
    config: LossConfig,
    ctx: EpochContext | None = None,
) -> ad.Tensor:
    """Mean over clips of the per-clip, per-channel anticipation loss.

    With C > 1 channels, a positive clip of class c is supervised as
    positive on channel c and as negative on every other channel;
    negative clips are negative on all channels. Channel c corresponds to
    RISK_CLASSES[c].
    """
    if len(risk_outputs) != len(annotations):
        raise ValueError(
            f"{len(risk_outputs)} risk outputs vs {len(annotations)} annotations"
        )
    if not risk_outputs:
        raise ValueError("empty batch")
    C = risk_outputs[0].data.shape[1]
    terms = []
    for out, ann in zip(risk_outputs, annotations):
        if out.data.shape[1] != C:
            raise ValueError("risk outputs disagree on channel count")
        if out.data.shape[0] != ann.num_frames:
            raise ValueError(
                f"clip {ann.clip_id!r}: {out.data.shape[0]} output frames vs "
                f"{ann.num_frames} annotated"
            )
        positive = ann.label == "positive"
        if positive and C > 1 and ann.risk_class is None:
            raise ValueError(
                f"clip {ann.clip_id!r}: positive clip without risk_class in "
                f"multi-channel loss"
            )
        for ch in range(C):
            channel = out if C == 1 else ad.slice_cols(out, ch, ch + 1)
            if positive and (C == 1 or RISK_CLASSES[ch] == ann.risk_class):
                terms.append(
                    positive_clip_loss(channel, ann.accident_start_T, config, ctx)
                )
            else:
                terms.append(negative_clip_loss(channel))
    total = terms[0] if len(terms) == 1 else ad.sum_all(ad.concat_rows(terms))
    return ad.scale_shift(total, 1.0 / len(risk_outputs), 0.0)


def dump_schedule(
    config: LossConfig,
    epochs: int,
    num_frames: int,
    phi_sequence: Sequence[float] | None = None,
) -> list[tuple[int, int, int, float]]:
    """Rows (epoch, t, d, alpha) of the penalty schedule for a T-frame clip.

    The incident sits at the last frame, so d = num_frames - t. For
    AdaLEA, epoch e uses phi_sequence[e - 2] (and 0.0 for e = 1, where no
    validated ATTC exists yet).
    """
    config.validate()
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if num_frames < 1:
        raise ConfigError(f"num_frames must be >= 1, got {num_frames}")
    if config.variant == "AdaLEA":
        phi_sequence = list(phi_sequence or [])
        if len(phi_sequence) < epochs - 1:
            raise ConfigError(
                f"AdaLEA schedule over {epochs} epochs needs {epochs - 1} "
                f"phi values, got {len(phi_sequence)}"
            )
        if any(p < 0 for p in phi_sequence):
            raise ConfigError("phi values must be >= 0")
    rows = []
    for e in range(1, epochs + 1):
        if config.variant == "AdaLEA":
            phi = 0.0 if e == 1 else float(phi_sequence[e - 2])
            ctx = EpochContext(e, phi)
        else:
            ctx = EpochContext(e, 0.0)
        alphas = frame_weights(num_frames, config, ctx)
        for t in range(1, num_frames + 1):
            rows.append((e, t, num_frames - t, float(alphas[t - 1, 0])))
    return rows
