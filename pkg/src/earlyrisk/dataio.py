"""On-disk interchange: JSONL annotations and the EANT feature container.

A dataset on disk is a pair ``<name>.jsonl`` / ``<name>.feat`` inside a
directory, one pair per split, plus an optional ``meta.json`` written by
the data generator. The feature container is binary: a header
``{magic "EANT", version u32, clip count u32, D_g u32, K u32, D_l u32}``
followed per clip by ``{clip_id length u32 + utf-8 bytes, num_frames
u32, row-major little-endian f64 global then local features, then mask
bytes}``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .data import (
    Clip,
    ClipAnnotation,
    Dataset,
    DatasetMeta,
    FeatureSequence,
)
from .errors import DataError

FEATURE_MAGIC = b"EANT"
FEATURE_VERSION = 1

_ANNOTATION_KEYS = {
    "clip_id",
    "label",
    "num_frames",
    "frame_rate_F",
    "accident_start_T",
    "risk_class",
}


def annotation_to_record(ann: ClipAnnotation) -> dict:
    record = {
        "clip_id": ann.clip_id,
        "label": ann.label,
        "num_frames": ann.num_frames,
        "frame_rate_F": ann.frame_rate_F,
    }
    if ann.accident_start_T is not None:
        record["accident_start_T"] = ann.accident_start_T
    if ann.risk_class is not None:
        record["risk_class"] = ann.risk_class
    return record


def record_to_annotation(record: dict, where: str) -> ClipAnnotation:
    if not isinstance(record, dict):
        raise DataError(f"{where}: annotation record must be an object")
    unknown = set(record) - _ANNOTATION_KEYS
    if unknown:
        raise DataError(f"{where}: unknown annotation keys {sorted(unknown)}")
    try:
        ann = ClipAnnotation(
            clip_id=record["clip_id"],
            label=record["label"],
            num_frames=int(record["num_frames"]),
            frame_rate_F=float(record["frame_rate_F"]),
            accident_start_T=(
                int(record["accident_start_T"])
                if "accident_start_T" in record
                else None
            ),
            risk_class=record.get("risk_class"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed annotation record: {exc}") from exc
    ann.validate()
    return ann


def write_annotations(path: Path, annotations: list[ClipAnnotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(annotation_to_record(ann), sort_keys=True))
            fh.write("\n")


def read_annotations(path: Path) -> list[ClipAnnotation]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    annotations = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            annotations.append(record_to_annotation(record, f"{path}:{lineno}"))
    return annotations


def write_features(fh, sequences: list[FeatureSequence]) -> None:
    if sequences:
        D_g = sequences[0].global_feats.shape[1]
        K, D_l = sequences[0].local_feats.shape[1:]
    else:
        D_g = K = D_l = 0
    fh.write(struct.pack("<4sIIIII", FEATURE_MAGIC, FEATURE_VERSION, len(sequences), D_g, K, D_l))
    for seq in sequences:
        if seq.global_feats.shape[1] != D_g or seq.local_feats.shape[1:] != (K, D_l):
            raise DataError(
                f"clip {seq.clip_id!r}: feature dims differ from the container header"
            )
        cid = seq.clip_id.encode("utf-8")
        fh.write(struct.pack("<I", len(cid)))
        fh.write(cid)
        fh.write(struct.pack("<I", seq.num_frames))
        fh.write(seq.global_feats.astype("<f8").tobytes())
        fh.write(seq.local_feats.astype("<f8").tobytes())
        fh.write(seq.local_mask.astype(np.uint8).tobytes())


def read_features(fh, where: str) -> list[FeatureSequence]:
    def take(count: int) -> bytes:
        buf = fh.read(count)
        if len(buf) != count:
            raise DataError(f"{where}: truncated feature container")
        return buf

    magic, version, count, D_g, K, D_l = struct.unpack("<4sIIIII", take(24))
    if magic != FEATURE_MAGIC:
        raise DataError(f"{where}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise DataError(
            f"{where}: unsupported feature container version {version} "
            f"(supported: {FEATURE_VERSION})"
        )
    sequences = []
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        clip_id = take(id_len).decode("utf-8")
        (T,) = struct.unpack("<I", take(4))
        global_feats = np.frombuffer(take(8 * T * D_g), dtype="<f8").reshape(T, D_g).copy()
        local_feats = (
            np.frombuffer(take(8 * T * K * D_l), dtype="<f8").reshape(T, K, D_l).copy()
        )
        local_mask = np.frombuffer(take(T * K), dtype=np.uint8).reshape(T, K) != 0
        sequences.append(FeatureSequence(clip_id, global_feats, local_feats, local_mask))
    return sequences


def save_dataset(directory: Path, dataset: Dataset, name: str = "data") -> None:
    """Write ``<name>.jsonl`` and ``<name>.feat`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_annotations(directory / f"{name}.jsonl", dataset.annotations)
    with open(directory / f"{name}.feat", "wb") as fh:
        write_features(fh, [c.features for c in dataset.clips])


def load_dataset(
    directory: Path,
    name: str = "data",
    num_classes: int | None = None,
    frame_rate: float | None = None,
) -> Dataset:
    """Load and validate one annotation/feature pair.

    Clip order follows the annotation file. When ``num_classes`` or
    ``frame_rate`` are not given (no meta.json context) they are
    inferred from the annotations.
    """
    directory = Path(directory)
    annotations = read_annotations(directory / f"{name}.jsonl")
    feat_path = directory / f"{name}.feat"
    if not feat_path.exists():
        raise DataError(f"feature container not found: {feat_path}")
    with open(feat_path, "rb") as fh:
        sequences = read_features(fh, str(feat_path))

    by_id = {}
    for seq in sequences:
        if seq.clip_id in by_id:
            raise DataError(f"clip {seq.clip_id!r}: duplicate in feature container")
        by_id[seq.clip_id] = seq
    clips = []
    for ann in annotations:
        seq = by_id.pop(ann.clip_id, None)
        if seq is None:
            raise DataError(f"clip {ann.clip_id!r}: annotated but missing features")
        clips.append(Clip(ann, seq))
    if by_id:
        raise DataError(
            f"feature container has {len(by_id)} clips without annotations, "
            f"e.g. {sorted(by_id)[0]!r}"
        )

    if frame_rate is None:
        frame_rate = annotations[0].frame_rate_F if annotations else 1.0
    if num_classes is None:
        classes = {a.risk_class for a in annotations if a.risk_class is not None}
        num_classes = max(1, len(classes))
    dataset = Dataset(clips, frame_rate, num_classes)
    dataset.validate()
    return dataset


def dataset_bytes(dataset: Dataset) -> bytes:
    """Canonical serialization, used for checkpoint fingerprints."""
    buf = io.BytesIO()
    for ann in dataset.annotations:
        buf.write(json.dumps(annotation_to_record(ann), sort_keys=True).encode())
        buf.write(b"\n")
    write_features(buf, [c.features for c in dataset.clips])
    return buf.getvalue()


def write_meta(path: Path, meta: DatasetMeta) -> None:
    doc = {
        "name": meta.name,
        "split_sizes": dict(meta.split_sizes),
        "frame_rate_F": meta.frame_rate_F,
        "num_classes": meta.num_classes,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(path: Path) -> DatasetMeta:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset meta not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON: {exc}") from exc
    try:
        meta = DatasetMeta(
            name=doc["name"],
            split_sizes={k: int(v) for k, v in doc["split_sizes"].items()},
            frame_rate_F=float(doc["frame_rate_F"]),
            num_classes=int(doc["num_classes"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"{path}: malformed meta: {exc}") from exc
    meta.validate()
    return meta
