"""Risk-rate sequence models.

Per frame, a soft attention over the local (per-object) features,
conditioned on the previous hidden state, is fused with the global
feature by concatenation; a recurrent layer (QRNN with causal temporal
convolutions, or an LSTM baseline) runs over the fused sequence, and a
per-frame sigmoid head emits one risk rate per class.

Because the attention is conditioned on h_{t-1}, the fused input is
built frame by frame, interleaved with the recurrence; the standalone
``qrnn_forward`` / ``lstm_forward`` operate on a fully known input
sequence and are the reference recurrences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FeatureSequence
from .errors import ConfigError, DataError, ShapeError

RECURRENT_KINDS = ("qrnn", "lstm")


@dataclass(frozen=True)
class ModelConfig:
    recurrent_kind: str = "qrnn"
    k: int = 2  # temporal kernel width (qrnn)
    m: int = 16  # hidden size
    num_classes: int = 1
    D_g: int = 8
    D_l: int = 8
    K: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.recurrent_kind not in RECURRENT_KINDS:
            raise ConfigError(
                f"recurrent_kind must be one of {RECURRENT_KINDS}, "
                f"got {self.recurrent_kind!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        for name in ("D_g", "D_l", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def fused_dim(self) -> int:
        return self.D_g + self.D_l


@dataclass
class AttentionParams:
    W_local: Tensor  # D_l x p
    W_hidden: Tensor  # m x p
    v: Tensor  # p x 1
    b: Tensor  # 1 x p


@dataclass
class QrnnParams:
    W_z: tuple[Tensor, ...]  # k lags of n x m
    W_f: tuple[Tensor, ...]
    W_i: tuple[Tensor, ...]
    W_o: tuple[Tensor, ...]
    b_z: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor

    @property
    def k(self) -> int:
        return len(self.W_z)

    @property
    def m(self) -> int:
        return self.b_z.data.shape[1]


@dataclass
class LstmParams:
    W_xg: Tensor  # n x m, cell candidate
    W_xf: Tensor
    W_xi: Tensor
    W_xo: Tensor
    W_hg: Tensor  # m x m
    W_hf: Tensor
    W_hi: Tensor
    W_ho: Tensor
    b_g: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor

    @property
    def m(self) -> int:
        return self.b_g.data.shape[1]


@dataclass
class ModelParams:
    attention: AttentionParams
    recurrent: QrnnParams | LstmParams
    head_W: Tensor  # m x C
    head_b: Tensor  # 1 x C


@dataclass
class Model:
    config: ModelConfig
    params: ModelParams

    def named_parameters(self) -> dict[str, Tensor]:
        att = self.params.attention
        named = {
            "attention.W_local": att.W_local,
            "attention.W_hidden": att.W_hidden,
            "attention.v": att.v,
            "attention.b": att.b,
            "head.W": self.params.head_W,
            "head.b": self.params.head_b,
        }
        rec = self.params.recurrent
        if isinstance(rec, QrnnParams):
            for gate in ("z", "f", "i", "o"):
                for j, w in enumerate(getattr(rec, f"W_{gate}")):
                    named[f"qrnn.W_{gate}.{j}"] = w
                named[f"qrnn.b_{gate}"] = getattr(rec, f"b_{gate}")
        else:
            for gate in ("g", "f", "i", "o"):
                named[f"lstm.W_x{gate}"] = getattr(rec, f"W_x{gate}")
                named[f"lstm.W_h{gate}"] = getattr(rec, f"W_h{gate}")
                named[f"lstm.b_{gate}"] = getattr(rec, f"b_{gate}")
        return named


@dataclass(eq=False)
class RiskTrajectory:
    clip_id: str
    rates: np.ndarray  # (num_frames, C), every entry in [0, 1]

    @property
    def num_frames(self) -> int:
        return self.rates.shape[0]

    @property
    def num_classes(self) -> int:
        return self.rates.shape[1]

    def validate(self) -> None:
        if self.rates.ndim != 2:
            raise DataError(f"clip {self.clip_id!r}: rates must be 2-D")
        if np.any((self.rates < 0) | (self.rates > 1)):
            raise DataError(f"clip {self.clip_id!r}: risk rates outside [0, 1]")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RiskTrajectory)
            and self.clip_id == other.clip_id
            and np.array_equal(self.rates, other.rates)
        )


def _uniform(rng, rows: int, cols: int, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)))


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, forget bias +1."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, m, p = config.fused_dim, config.m, config.m
    attention = AttentionParams(
        W_local=_uniform(rng, config.D_l, p, config.D_l),
        W_hidden=_uniform(rng, m, p, m),
        v=_uniform(rng, p, 1, p),
        b=Tensor(np.zeros((1, p))),
    )
    if config.recurrent_kind == "qrnn":
        fan = n * config.k

        def kernel():
            return tuple(_uniform(rng, n, m, fan) for _ in range(config.k))

        recurrent = QrnnParams(
            W_z=kernel(),
            W_f=kernel(),
            W_i=kernel(),
            W_o=kernel(),
            b_z=Tensor(np.zeros((1, m))),
            b_f=Tensor(np.ones((1, m))),
            b_i=Tensor(np.zeros((1, m))),
            b_o=Tensor(np.zeros((1, m))),
        )
    else:
        recurrent = LstmParams(
            W_xg=_uniform(rng, n, m, n),
            W_xf=_uniform(rng, n, m, n),
            W_xi=_uniform(rng, n, m, n),
            W_xo=_uniform(rng, n, m, n),
            W_hg=_uniform(rng, m, m, m),
            W_hf=_uniform(rng, m, m, m),
            W_hi=_uniform(rng, m, m, m),
            W_ho=_uniform(rng, m, m, m),
            b_g=Tensor(np.zeros((1, m))),
            b_f=Tensor(np.ones((1, m))),
            b_i=Tensor(np.zeros((1, m))),
            b_o=Tensor(np.zeros((1, m))),
        )
    head_W = _uniform(rng, m, config.num_classes, m)
    head_b = Tensor(np.zeros((1, config.num_classes)))
    return ModelParams(attention, recurrent, head_W, head_b)


def qrnn_forward(X: Tensor, params: QrnnParams) -> Tensor:
    """ifo-pooled QRNN over a T x n sequence.

    Z = tanh(conv(X)), F/I/O = sigmoid(conv(X)) with shared causal kernel
    width; c_t = f_t * c_{t-1} + i_t * z_t, h_t = o_t * c_t, c_0 = 0.
    """
    T = X.data.shape[0]
    Z = ad.tanh(ad.causal_conv1d(X, params.W_z, params.b_z))
    F = ad.sigmoid(ad.causal_conv1d(X, params.W_f, params.b_f))
    I = ad.sigmoid(ad.causal_conv1d(X, params.W_i, params.b_i))
    O = ad.sigmoid(ad.causal_conv1d(X, params.W_o, params.b_o))
    c = Tensor(np.zeros((1, params.m)))
    hs = []
    for t in range(T):
        z_t = ad.slice_rows(Z, t, t + 1)
        f_t = ad.slice_rows(F, t, t + 1)
        i_t = ad.slice_rows(I, t, t + 1)
        o_t = ad.slice_rows(O, t, t + 1)
        c = ad.add(ad.mul(f_t, c), ad.mul(i_t, z_t))
        hs.append(ad.mul(o_t, c))
    return ad.concat_rows(hs)


def lstm_forward(X: Tensor, params: LstmParams) -> Tensor:
    """Standard LSTM over a T x n sequence, c_0 = h_0 = 0."""
    T = X.data.shape[0]
    m = params.m
    c = Tensor(np.zeros((1, m)))
    h = Tensor(np.zeros((1, m)))
    hs = []
    for t in range(T):
        x_t = ad.slice_rows(X, t, t + 1)
        g = ad.tanh(ad.add(ad.affine(x_t, params.W_xg, params.b_g), ad.matmul(h, params.W_hg)))
        f = ad.sigmoid(ad.add(ad.affine(x_t, params.W_xf, params.b_f), ad.matmul(h, params.W_hf)))
        i = ad.sigmoid(ad.add(ad.affine(x_t, params.W_xi, params.b_i), ad.matmul(h, params.W_hi)))
        o = ad.sigmoid(ad.add(ad.affine(x_t, params.W_xo, params.b_o), ad.matmul(h, params.W_ho)))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        hs.append(h)
    return ad.concat_rows(hs)


def attend_locals(
    locals_t: Tensor, mask, h_prev: Tensor, params: AttentionParams
) -> Tensor:
    """Additive soft attention over one frame's K local feature rows.

    scores_j = v . tanh(W_local l_j + W_hidden h_prev + b); the masked
    softmax of the scores weights the rows into a 1 x D_l context (a
    convex combination of the unmasked rows; zero if all are masked).
    """
    shift = ad.affine(h_prev, params.W_hidden, params.b)  # 1 x p
    proj = ad.tanh(ad.affine(locals_t, params.W_local, shift))  # K x p
    scores = ad.matmul(proj, params.v)  # K x 1
    weights = ad.masked_softmax(scores, mask)
    return ad.matmul(ad.transpose(weights), locals_t)  # 1 x D_l


def _gate_slices(pre: Tensor, m: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    # pre is 1 x 4m ordered (z|g, f, i, o)
    z = ad.tanh(ad.slice_cols(pre, 0, m))
    fio = ad.sigmoid(ad.slice_cols(pre, m, 4 * m))
    f = ad.slice_cols(fio, 0, m)
    i = ad.slice_cols(fio, m, 2 * m)
    o = ad.slice_cols(fio, 2 * m, 3 * m)
    return z, f, i, o


def _forward_tensor(features: FeatureSequence, model: Model) -> Tensor:
    """Risk rates as a recorded T x C tensor (the training-path forward)."""
    cfg = model.config
    pp = model.params
    T = features.num_frames
    if features.global_feats.shape[1] != cfg.D_g:
        raise ShapeError(
            f"global feature dim {features.global_feats.shape[1]} != config D_g {cfg.D_g}"
        )
    if features.local_feats.shape[1:] != (cfg.K, cfg.D_l):
        raise ShapeError(
            f"local feature dims {features.local_feats.shape[1:]} != config "
            f"(K, D_l) ({cfg.K}, {cfg.D_l})"
        )
    m = cfg.m
    # Per-frame feature leaves: the features are constants, so keeping
    # them as small leaf tensors avoids scattering gradients into
    # whole-clip matrices during backward.
    G_rows = [Tensor(features.global_feats[t : t + 1]) for t in range(T)]
    L_rows = [Tensor(features.local_feats[t]) for t in range(T)]

    rec = pp.recurrent
    if isinstance(rec, QrnnParams):
        W_cat = [
            ad.concat_cols([rec.W_z[j], rec.W_f[j], rec.W_i[j], rec.W_o[j]])
            for j in range(rec.k)
        ]
        b_cat = ad.concat_cols([rec.b_z, rec.b_f, rec.b_i, rec.b_o])
    else:
        Wx_cat = ad.concat_cols([rec.W_xg, rec.W_xf, rec.W_xi, rec.W_xo])
        Wh_cat = ad.concat_cols([rec.W_hg, rec.W_hf, rec.W_hi, rec.W_ho])
        b_cat = ad.concat_cols([rec.b_g, rec.b_f, rec.b_i, rec.b_o])

    h = Tensor(np.zeros((1, m)))
    c = Tensor(np.zeros((1, m)))
    fused_history: list[Tensor] = []
    hs = []
    masks = features.local_mask
    for t in range(T):
        # attention over this frame's locals, conditioned on h_{t-1}
        L_t = L_rows[t]
        shift = ad.affine(h, pp.attention.W_hidden, pp.attention.b)
        proj = ad.tanh(ad.add_rowvec(ad.matmul(L_t, pp.attention.W_local), shift))
        weights = ad.masked_softmax(ad.matmul(proj, pp.attention.v), masks[t])
        context = ad.matmul(ad.transpose(weights), L_t)
        fused = ad.concat_cols([G_rows[t], context])
        fused_history.append(fused)

        if isinstance(rec, QrnnParams):
            pre = ad.matmul(fused, W_cat[0])
            for j in range(1, min(rec.k, t + 1)):
                pre = ad.add(pre, ad.matmul(fused_history[t - j], W_cat[j]))
            pre = ad.add(pre, b_cat)
            z, f, i, o = _gate_slices(pre, m)
            c = ad.add(ad.mul(f, c), ad.mul(i, z))
            h = ad.mul(o, c)
        else:
            pre = ad.add(ad.add(ad.matmul(fused, Wx_cat), ad.matmul(h, Wh_cat)), b_cat)
            g, f, i, o = _gate_slices(pre, m)
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
        hs.append(h)

    H = ad.concat_rows(hs)
    return ad.sigmoid(ad.affine(H, pp.head_W, pp.head_b))


def model_forward(features: FeatureSequence, model: Model) -> RiskTrajectory:
    """Per-frame risk rates in (0, 1), one column per class."""
    out = _forward_tensor(features, model)
    return RiskTrajectory(features.clip_id, out.data)
