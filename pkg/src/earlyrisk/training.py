"""Training loop with the validated-ATTC feedback, checkpoints, comparison.

Each epoch trains on seeded shuffled minibatches with an EpochContext
carrying (epoch e, Phi(e-1)), then validates to get (AP_e, ATTC_e);
Phi(e) is set to ATTC_e (optionally gated on a minimum validation AP)
and feeds the next epoch's AdaLEA schedule. Phi(0) = 0. Everything is
deterministic given config + seed: the shuffle for epoch e is drawn from
default_rng([seed, e]), so an epoch can be replayed from its start
state and Phi value alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .dataio import dataset_bytes
from .errors import ConfigError, DataError, DivergenceError, EvalError
from .evaluation import EvalConfig, EvalReport, per_class_report
from .losses import EpochContext, LossConfig, batch_loss
from .model import Model, ModelConfig, init_params, model_forward, _forward_tensor
from .serde import as_float, as_int, as_str, check_keys

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ERCP"
CHECKPOINT_VERSION = 1

OPTIMIZER_KINDS = ("adam", "sgd_momentum")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    momentum: float = 0.9  # sgd_momentum only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(
                f"optimizer kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    phi_gate: float | None = None  # min validation AP for updating Phi

    def validate(self) -> None:
        self.loss.validate()
        self.model.validate()
        self.optimizer.validate()
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.phi_gate is not None and not 0 <= self.phi_gate <= 1:
            raise ConfigError(f"phi_gate must be in [0, 1], got {self.phi_gate}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ap: float
    val_attc: float
    phi_used: float
    batch_losses: list[float] = field(default_factory=list)


@dataclass
class OptimizerState:
    step: int
    slots: dict


@dataclass
class Checkpoint:
    version: int
    config: TrainConfig
    parameters: dict  # name -> ndarray
    epoch: int
    phi_history: list[float]
    history: list[EpochRecord]
    dataset_fingerprint: str


# ---------------------------------------------------------------------------
# config (de)serialization -- JSON mirrors the dataclass field names,
# with "lambda" for LossConfig.lambda_
# ---------------------------------------------------------------------------


def loss_config_to_dict(cfg: LossConfig) -> dict:
    return {
        "variant": cfg.variant,
        "lambda": cfg.lambda_,
        "gamma": cfg.gamma,
        "frame_rate_F": cfg.frame_rate_F,
    }


def loss_config_from_dict(doc: dict, where: str = "loss") -> LossConfig:
    check_keys(doc, {"variant", "lambda", "gamma", "frame_rate_F"}, where)
    defaults = LossConfig()
    cfg = LossConfig(
        variant=as_str(doc, "variant", defaults.variant, where),
        lambda_=as_float(doc, "lambda", defaults.lambda_, where),
        gamma=as_float(doc, "gamma", defaults.gamma, where),
        frame_rate_F=as_float(doc, "frame_rate_F", defaults.frame_rate_F, where),
    )
    cfg.validate()
    return cfg


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "recurrent_kind": cfg.recurrent_kind,
        "k": cfg.k,
        "m": cfg.m,
        "num_classes": cfg.num_classes,
        "D_g": cfg.D_g,
        "D_l": cfg.D_l,
        "K": cfg.K,
        "seed": cfg.seed,
    }


def model_config_from_dict(doc: dict, where: str = "model") -> ModelConfig:
    allowed = {"recurrent_kind", "k", "m", "num_classes", "D_g", "D_l", "K", "seed"}
    check_keys(doc, allowed, where)
    defaults = ModelConfig()
    cfg = ModelConfig(
        recurrent_kind=as_str(doc, "recurrent_kind", defaults.recurrent_kind, where),
        k=as_int(doc, "k", defaults.k, where),
        m=as_int(doc, "m", defaults.m, where),
        num_classes=as_int(doc, "num_classes", defaults.num_classes, where),
        D_g=as_int(doc, "D_g", defaults.D_g, where),
        D_l=as_int(doc, "D_l", defaults.D_l, where),
        K=as_int(doc, "K", defaults.K, where),
        seed=as_int(doc, "seed", defaults.seed, where),
    )
    cfg.validate()
    return cfg


def optimizer_config_to_dict(cfg: OptimizerConfig) -> dict:
    return {
        "kind": cfg.kind,
        "momentum": cfg.momentum,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "eps": cfg.eps,
    }


def optimizer_config_from_dict(doc: dict, where: str = "optimizer") -> OptimizerConfig:
    check_keys(doc, {"kind", "momentum", "beta1", "beta2", "eps"}, where)
    defaults = OptimizerConfig()
    cfg = OptimizerConfig(
        kind=as_str(doc, "kind", defaults.kind, where),
        momentum=as_float(doc, "momentum", defaults.momentum, where),
        beta1=as_float(doc, "beta1", defaults.beta1, where),
        beta2=as_float(doc, "beta2", defaults.beta2, where),
        eps=as_float(doc, "eps", defaults.eps, where),
    )
    cfg.validate()
    return cfg


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "loss": loss_config_to_dict(cfg.loss),
        "model": model_config_to_dict(cfg.model),
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "optimizer": optimizer_config_to_dict(cfg.optimizer),
        "seed": cfg.seed,
        "phi_gate": cfg.phi_gate,
    }


def train_config_from_dict(doc: dict, where: str = "config") -> TrainConfig:
    allowed = {
        "loss",
        "model",
        "epochs",
        "batch_size",
        "learning_rate",
        "optimizer",
        "seed",
        "phi_gate",
    }
    check_keys(doc, allowed, where)
    defaults = TrainConfig()
    cfg = TrainConfig(
        loss=loss_config_from_dict(doc.get("loss", {}), f"{where}.loss"),
        model=model_config_from_dict(doc.get("model", {}), f"{where}.model"),
        epochs=as_int(doc, "epochs", defaults.epochs, where),
        batch_size=as_int(doc, "batch_size", defaults.batch_size, where),
        learning_rate=as_float(doc, "learning_rate", defaults.learning_rate, where),
        optimizer=optimizer_config_from_dict(
            doc.get("optimizer", {}), f"{where}.optimizer"
        ),
        seed=as_int(doc, "seed", defaults.seed, where),
        phi_gate=as_float(doc, "phi_gate", None, where),
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def optimizer_step(
    params: dict,
    grads: dict,
    state: OptimizerState | None,
    config: TrainConfig,
) -> tuple[dict, OptimizerState]:
    """One SGD-momentum or Adam update; pure function of its inputs."""
    opt = config.optimizer
    lr = config.learning_rate
    step = (state.step if state is not None else 0) + 1
    old_slots = state.slots if state is not None else {}
    new_params = {}
    new_slots = {}
    if opt.kind == "adam":
        bc1 = 1.0 - opt.beta1**step
        bc2 = 1.0 - opt.beta2**step
        for name, p in params.items():
            g = grads[name]
            slot = old_slots.get(name)
            m_prev = slot["m"] if slot else np.zeros_like(p)
            v_prev = slot["v"] if slot else np.zeros_like(p)
            m = opt.beta1 * m_prev + (1.0 - opt.beta1) * g
            v = opt.beta2 * v_prev + (1.0 - opt.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
            new_params[name] = p - update
            new_slots[name] = {"m": m, "v": v}
    else:
        for name, p in params.items():
            g = grads[name]
            slot = old_slots.get(name)
            buf_prev = slot["buf"] if slot else np.zeros_like(p)
            buf = opt.momentum * buf_prev + g
            new_params[name] = p - lr * buf
            new_slots[name] = {"buf": buf}
    return new_params, OptimizerState(step, new_slots)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def run_epoch(
    model: Model,
    train_set: Dataset,
    config: TrainConfig,
    ctx: EpochContext,
    opt_state: OptimizerState | None,
) -> tuple[list[float], OptimizerState]:
    """One pass of shuffled minibatches; mutates model parameters in place."""
    rng = np.random.default_rng([config.seed, ctx.epoch])
    order = rng.permutation(len(train_set.clips))
    named = model.named_parameters()
    batch_losses: list[float] = []
    for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
        batch = [train_set.clips[i] for i in order[start : start + config.batch_size]]
        with ad.Tape() as tape:
            outputs = [_forward_tensor(clip.features, model) for clip in batch]
            loss = batch_loss(
                outputs, [clip.annotation for clip in batch], config.loss, ctx
            )
        value = float(loss.data[0, 0])
        if not math.isfinite(value):
            raise DivergenceError(ctx.epoch, batch_index, value)
        grads = ad.backward(tape, loss)
        params = {name: t.data for name, t in named.items()}
        grad_arrays = {name: grads.of(t) for name, t in named.items()}
        new_params, opt_state = optimizer_step(params, grad_arrays, opt_state, config)
        for name, tensor in named.items():
            tensor.data = new_params[name]
        batch_losses.append(value)
    return batch_losses, opt_state


def evaluate_split(model: Model, dataset: Dataset) -> EvalReport:
    trajectories = [model_forward(clip.features, model) for clip in dataset.clips]
    return per_class_report(trajectories, dataset.annotations, EvalConfig())


def validate_epoch(model: Model, val_set: Dataset) -> tuple[float, float]:
    """(macro AP, macro ATTC) on the validation split."""
    if len(val_set) == 0:
        raise DataError("validation split is empty")
    report = evaluate_split(model, val_set)
    return report.macro_ap, report.macro_attc


def train(
    config: TrainConfig, train_set: Dataset, val_set: Dataset
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Full training run; returns the final checkpoint and epoch history."""
    config.validate()
    if len(train_set) == 0:
        raise DataError("training split is empty")
    if not any(c.annotation.label == "positive" for c in val_set.clips):
        raise DataError("validation split needs at least one positive clip")
    if config.loss.frame_rate_F != train_set.frame_rate_F:
        raise ConfigError(
            f"loss frame_rate_F {config.loss.frame_rate_F} != dataset rate "
            f"{train_set.frame_rate_F}"
        )

    model = Model(config.model, init_params(config.model))
    fingerprint = hashlib.sha256(
        dataset_bytes(train_set) + dataset_bytes(val_set)
    ).hexdigest()

    opt_state: OptimizerState | None = None
    phi = 0.0  # Phi(0)
    phi_history: list[float] = []
    records: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        ctx = EpochContext(epoch, phi)
        batch_losses, opt_state = run_epoch(model, train_set, config, ctx, opt_state)
        if config.loss.variant != "AdaLEA":
            assert ctx.phi_reads == 0, "EL/LEA consulted the ATTC feedback"
        try:
            val_ap, val_attc = validate_epoch(model, val_set)
            if config.phi_gate is not None and val_ap < config.phi_gate:
                logger.info(
                    "epoch %d: val AP %.3f below phi_gate %.3f, holding Phi at %.3f",
                    epoch,
                    val_ap,
                    config.phi_gate,
                    phi,
                )
            else:
                phi = val_attc
        except EvalError as exc:
            val_ap = float("nan")
            val_attc = float("nan")
            logger.warning("epoch %d: %s; holding Phi at %.3f", epoch, exc, phi)
        phi_history.append(phi)
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(batch_losses)),
                val_ap=val_ap,
                val_attc=val_attc,
                phi_used=ctx.peek_phi(),
                batch_losses=batch_losses,
            )
        )

    checkpoint = Checkpoint(
        version=CHECKPOINT_VERSION,
        config=config,
        parameters={name: t.data.copy() for name, t in model.named_parameters().items()},
        epoch=config.epochs,
        phi_history=phi_history,
        history=records,
        dataset_fingerprint=fingerprint,
    )
    return checkpoint, records


def model_from_checkpoint(checkpoint: Checkpoint) -> Model:
    model = Model(checkpoint.config.model, init_params(checkpoint.config.model))
    named = model.named_parameters()
    if set(named) != set(checkpoint.parameters):
        raise DataError("checkpoint parameters do not match the model layout")
    for name, tensor in named.items():
        stored = checkpoint.parameters[name]
        if stored.shape != tensor.data.shape:
            raise DataError(
                f"checkpoint parameter {name!r} has shape {stored.shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = stored.copy()
    return model


# ---------------------------------------------------------------------------
# checkpoint file format
# ---------------------------------------------------------------------------


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    names = sorted(checkpoint.parameters)
    header = {
        "config": train_config_to_dict(checkpoint.config),
        "epoch": checkpoint.epoch,
        "phi_history": [float(p) for p in checkpoint.phi_history],
        "history": [
            [r.epoch, r.train_loss, r.val_ap, r.val_attc, r.phi_used]
            for r in checkpoint.history
        ],
        "dataset_fingerprint": checkpoint.dataset_fingerprint,
        "parameters": [
            [name, *checkpoint.parameters[name].shape] for name in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(checkpoint.parameters[name].astype("<f8").tobytes())


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated checkpoint header")
        magic, version, blob_len = struct.unpack("<4sIQ", head)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(
                f"{path}: bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        if version != CHECKPOINT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version {version} "
                f"(supported: {CHECKPOINT_VERSION})"
            )
        blob = fh.read(blob_len)
        if len(blob) != blob_len:
            raise DataError(f"{path}: truncated checkpoint header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed checkpoint header: {exc}") from exc
        config = train_config_from_dict(header["config"], f"{path}:config")
        parameters = {}
        for entry in header["parameters"]:
            name, rows, cols = entry
            raw = fh.read(8 * rows * cols)
            if len(raw) != 8 * rows * cols:
                raise DataError(f"{path}: truncated parameter {name!r}")
            parameters[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    history = [
        EpochRecord(int(e), tl, ap, attc, phi)
        for e, tl, ap, attc, phi in header["history"]
    ]
    return Checkpoint(
        version=version,
        config=config,
        parameters=parameters,
        epoch=int(header["epoch"]),
        phi_history=[float(p) for p in header["phi_history"]],
        history=history,
        dataset_fingerprint=header["dataset_fingerprint"],
    )


# ---------------------------------------------------------------------------
# history files and run comparison
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss", "val_ap", "val_attc", "phi_used")


def write_history_csv(path: Path, records: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in records:
            fh.write(
                f"{r.epoch},{float(r.train_loss)!r},{float(r.val_ap)!r},"
                f"{float(r.val_attc)!r},{float(r.phi_used)!r}\n"
            )


def read_history_csv(path: Path) -> list[EpochRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"history not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise DataError(f"{path}: unexpected history columns {reader.fieldnames}")
        for row in reader:
            records.append(
                EpochRecord(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    val_ap=float(row["val_ap"]),
                    val_attc=float(row["val_attc"]),
                    phi_used=float(row["phi_used"]),
                )
            )
    return records


@dataclass
class RunSummary:
    run: str
    variant: str
    recurrent_kind: str
    epochs: int
    final_val_ap: float
    final_val_attc: float
    test_ap: float
    test_attc: float
    history: list[EpochRecord]


@dataclass
class Comparison:
    runs: list[RunSummary]
    best_ap_run: str
    best_attc_run: str

    def render_table(self) -> str:
        header = (
            f"{'run':<24} {'loss':<8} {'rnn':<6} {'epochs':>6} "
            f"{'test_AP':>8} {'test_ATTC':>10}"
        )
        lines = [header, "-" * len(header)]
        for r in self.runs:
            flags = []
            if r.run == self.best_ap_run:
                flags.append("max AP")
            if r.run == self.best_attc_run:
                flags.append("max ATTC")
            suffix = f"  <- {', '.join(flags)}" if flags else ""
            lines.append(
                f"{r.run:<24} {r.variant:<8} {r.recurrent_kind:<6} {r.epochs:>6} "
                f"{r.test_ap:>8.4f} {r.test_attc:>10.4f}{suffix}"
            )
        return "\n".join(lines)


def compare(run_dirs) -> Comparison:
    """Merge metric histories and final test reports across run dirs."""
    runs = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            raise DataError(f"run directory not found: {run_dir}")
        config_path = run_dir / "config.json"
        if not config_path.exists():
            raise DataError(f"run config not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as fh:
            config = train_config_from_dict(json.load(fh), str(config_path))
        history = read_history_csv(run_dir / "history.csv")
        report_path = run_dir / "report.json"
        if not report_path.exists():
            raise DataError(f"run report not found: {report_path}")
        with open(report_path, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        last = history[-1]
        runs.append(
            RunSummary(
                run=run_dir.name,
                variant=config.loss.variant,
                recurrent_kind=config.model.recurrent_kind,
                epochs=len(history),
                final_val_ap=last.val_ap,
                final_val_attc=last.val_attc,
                test_ap=float(report["macro"]["map"]),
                test_attc=float(report["macro"]["attc"]),
                history=history,
            )
        )
    if not runs:
        raise DataError("compare needs at least one run directory")
    best_ap = max(runs, key=lambda r: r.test_ap).run
    best_attc = max(runs, key=lambda r: r.test_attc).run
    return Comparison(runs, best_ap, best_attc)


def write_comparison_csv(path: Path, comparison: Comparison) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "run,variant,recurrent_kind,epoch,train_loss,val_ap,val_attc,"
            "phi_used,test_ap,test_attc\n"
        )
        for r in comparison.runs:
            for rec in r.history:
                fh.write(
                    f"{r.run},{r.variant},{r.recurrent_kind},{rec.epoch},"
                    f"{float(rec.train_loss)!r},{float(rec.val_ap)!r},"
                    f"{float(rec.val_attc)!r},{float(rec.phi_used)!r},"
                    f"{float(r.test_ap)!r},{float(r.test_attc)!r}\n"
                )
