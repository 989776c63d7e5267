"""On-disk formats: dataset container, prompt files, heatmaps, reports.

The dataset container is a little-endian binary layout with an 8-byte
magic and a versioned header; embeddings are stored as float32 and widened
to float64 on load. Every reader raises a typed FormatError on malformed
input, never a bare exception.
"""
from __future__ import annotations

import datetime
import json
import struct

import numpy as np

from .core import EmbeddingMatrix, WsiBag
from .errors import (
    BadMagicError,
    ClassOutOfRangeError,
    CorruptHeaderError,
    EmptyPromptSetError,
    FormatError,
    SchemaError,
    TruncatedFileError,
    VersionUnsupportedError,
)

MAGIC = b"SLIPEMB1"
DATASET_VERSION = 1
REPORT_SCHEMA_VERSION = 1

# Sanity bounds so corrupted counts fail fast instead of allocating wildly.
MAX_D_V = 4096
MAX_BAGS = 1_000_000
MAX_PATCHES = 1_000_000


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]


def write_dataset(path, bags) -> None:
    """Serialize bags to the container format; class count is derived from
    the largest label present."""
    bags = list(bags)
    if not bags:
        raise ValueError("cannot write an empty dataset")
    d_v = bags[0].patches.cols
    num_classes = max(bag.label for bag in bags) + 1
    parts = [MAGIC, struct.pack("<IIII", DATASET_VERSION, d_v, len(bags),
                                num_classes)]
    for bag in bags:
        if bag.patches.cols != d_v:
            raise ValueError("all bags must share one embedding dimension")
        pid = bag.patient_id.encode("utf-8")
        if len(pid) > 0xFFFF:
            raise ValueError("patient id too long")
        parts.append(struct.pack("<II", bag.num_patches, bag.label))
        parts.append(struct.pack("<H", len(pid)))
        parts.append(pid)
        for x, y in bag.coords:
            parts.append(struct.pack("<II", x, y))
        parts.append(
            np.asarray(bag.patches.data, dtype="<f4").tobytes()
        )
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_dataset(path):
    """Parse the container; returns (bags, num_classes)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if len(blob) < len(MAGIC):
        raise TruncatedFileError("file shorter than magic")
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    version = r.u32()
    if version != DATASET_VERSION:
        raise VersionUnsupportedError(f"unsupported version {version}")
    d_v = r.u32()
    num_bags = r.u32()
    num_classes = r.u32()
    if not 1 <= d_v <= MAX_D_V:
        raise CorruptHeaderError(f"d_v={d_v} out of range")
    if not 1 <= num_bags <= MAX_BAGS:
        raise CorruptHeaderError(f"bag count {num_bags} out of range")
    if num_classes < 1:
        raise CorruptHeaderError("class count must be >= 1")

    bags = []
    max_label = -1
    for b in range(num_bags):
        n = r.u32()
        label = r.u32()
        if not 1 <= n <= MAX_PATCHES:
            raise CorruptHeaderError(f"bag {b}: patch count {n} out of range")
        if label >= num_classes:
            raise CorruptHeaderError(
                f"bag {b}: label {label} >= class count {num_classes}"
            )
        max_label = max(max_label, label)
        pid_len = r.u16()
        try:
            pid = r.take(pid_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptHeaderError(f"bag {b}: patient id not UTF-8") from exc
        coords_raw = struct.unpack(f"<{2 * n}I", r.take(8 * n))
        coords = tuple(zip(coords_raw[0::2], coords_raw[1::2]))
        emb = np.frombuffer(r.take(4 * n * d_v), dtype="<f4")
        # corrupted bytes may decode to signaling NaNs; the cast warning is
        # moot because non-finite values are rejected right below
        with np.errstate(invalid="ignore"):
            emb = emb.astype(np.float64).reshape(n, d_v)
        if not np.all(np.isfinite(emb)):
            raise CorruptHeaderError(f"bag {b}: non-finite embedding values")
        try:
            bags.append(WsiBag(
                patches=EmbeddingMatrix(emb, semantics="patch"),
                coords=coords, label=label, patient_id=pid,
            ))
        except (ValueError, FormatError) as exc:
            raise CorruptHeaderError(f"bag {b}: {exc}") from exc
    if r.pos != len(blob):
        raise CorruptHeaderError(
            f"{len(blob) - r.pos} trailing bytes after last bag"
        )
    if max_label + 1 != num_classes:
        raise CorruptHeaderError(
            f"class count {num_classes} != max label + 1 ({max_label + 1})"
        )
    return bags, num_classes


def read_prompt_lines(path):
    """One prompt per line; blank lines and '#' comments are skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    prompts = [ln for ln in lines if ln and not ln.startswith("#")]
    if not prompts:
        raise EmptyPromptSetError(f"{path}: no usable prompt lines")
    return prompts


# Alias matching the tissue-file contract; class-name files share the format.
read_tissue_prompts = read_prompt_lines


def export_heatmap(bag: WsiBag, correlation, class_index: int,
                   csv_path, pgm_path):
    """Write per-patch scores for one class as CSV plus a binary PGM image.

    Scores are min-max scaled to [0, 255]; a constant bag maps to 255.
    Returns (top5 patch indices, bottom5 patch indices).
    """
    corr = np.asarray(correlation, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != bag.num_patches:
        raise ValueError("correlation matrix must be N x C")
    if not 0 <= class_index < corr.shape[1]:
        raise ClassOutOfRangeError(
            f"class {class_index} outside [0, {corr.shape[1]})"
        )
    scores = corr[:, class_index]

    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("grid_x,grid_y,score\n")
        for (x, y), s in zip(bag.coords, scores):
            fh.write(f"{x},{y},{float(s)!r}\n")

    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo < 1e-300:
        scaled = np.full(len(scores), 255, dtype=np.uint8)
    else:
        scaled = np.array(
            [int(round((s - lo) / (hi - lo) * 255)) for s in scores],
            dtype=np.uint8,
        )
    width = max(x for x, _ in bag.coords) + 1
    height = max(y for _, y in bag.coords) + 1
    image = np.zeros((height, width), dtype=np.uint8)
    for (x, y), v in zip(bag.coords, scaled):
        image[y, x] = v
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())

    order = np.argsort(-scores, kind="stable")
    top = [int(i) for i in order[:5]]
    bottom = [int(i) for i in np.argsort(scores, kind="stable")[:5]]
    return top, bottom


_REPORT_REQUIRED = ("schema_version", "config", "class_names",
                    "tissue_descriptions", "history", "metrics")


def write_report(path, config: dict, history_records, metrics: dict,
                 class_names, tissue_descriptions, context=None,
                 extra: dict | None = None) -> dict:
    """Serialize a run report as one JSON document and return it.

    `context` is None or {"shared": bool, "vectors": [[...]] per context}.
    Floats survive the round trip exactly (shortest repr encoding).
    """
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": dict(config),
        "class_names": list(class_names),
        "tissue_descriptions": list(tissue_descriptions),
        "context": context,
        "history": [[int(e), int(i), float(l)] for e, i, l in history_records],
        "metrics": metrics,
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def read_report(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: report must be a JSON object")
    missing = [k for k in _REPORT_REQUIRED if k not in doc]
    if missing:
        raise SchemaError(f"{path}: missing required fields {missing}")
    if doc["schema_version"] != REPORT_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unsupported schema version {doc['schema_version']}"
        )
    return doc
