"""On-disk formats: annotations, heatmaps, kernel pools, cluster models, predictions.

Binary containers start with a 4-byte magic and a little-endian u32 version;
payloads are little-endian float32, row-major.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .clustering import ClusterModel
from .pool import ModelPool
from .skeleton import NUM_KEYPOINTS
from .synth import Sample

VERSION = 1
HEATMAP_MAGIC = b"GMHM"
POOL_MAGIC = b"GMPK"
CLUSTER_MAGIC = b"GMKM"

ANNOTATIONS_FILE = "annotations.jsonl"
HEATMAP_DIR = "heatmaps"


class FormatError(ValueError):
    """Malformed file; the message names the byte offset or line number."""


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated {what} at byte offset {self.pos} "
                              f"(need {n} bytes, {len(self.data) - self.pos} left)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected):
        got = self.take(4, "magic")
        if got != expected:
            raise FormatError(f"{self.path}: bad magic {got!r} at byte offset 0, expected {expected.decode()!r}")
        version = self.u32("version")
        if version != VERSION:
            raise FormatError(f"{self.path}: unsupported version {version} at byte offset 4")

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, count, what):
        offset = self.pos
        arr = np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)
        bad = np.flatnonzero(~np.isfinite(arr))
        if len(bad):
            raise FormatError(f"{self.path}: non-finite {what} value at byte offset {offset + 4 * bad[0]}")
        return arr

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes at byte offset {self.pos}")


def _read_bytes(path):
    data = Path(path).read_bytes()
    if not data:
        raise FormatError(f"{path}: empty file")
    return data


def _f32_payload(arr, what):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"refusing to write non-finite {what}")
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# heatmaps

def write_heatmaps(path, maps):
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise ValueError("heatmaps must be a (K, H, W) stack")
    k, h, w = maps.shape
    with atomic_write(path) as fh:
        fh.write(HEATMAP_MAGIC + struct.pack("<IIII", VERSION, k, h, w))
        fh.write(_f32_payload(maps, "heatmap"))


def read_heatmaps(path):
    r = _Reader(_read_bytes(path), path)
    r.magic(HEATMAP_MAGIC)
    k, h, w = r.u32("K"), r.u32("H"), r.u32("W")
    maps = r.f32(k * h * w, "heatmap").reshape(k, h, w)
    r.finish()
    return maps


# kernel pools

def write_pool(path, pool: ModelPool):
    n_models, n_edges, side, _ = pool.kernels.shape
    with atomic_write(path) as fh:
        fh.write(POOL_MAGIC + struct.pack("<IIII", VERSION, n_models, pool.radius, n_edges))
        for i, j in pool.edges:
            fh.write(struct.pack("<II", i, j))
        fh.write(_f32_payload(pool.kernels, "kernel"))


def read_pool(path) -> ModelPool:
    r = _Reader(_read_bytes(path), path)
    r.magic(POOL_MAGIC)
    n_models, radius, n_edges = r.u32("L"), r.u32("radius"), r.u32("edge count")
    edges = tuple((r.u32("edge sender"), r.u32("edge receiver")) for _ in range(n_edges))
    side = 2 * radius + 1
    kernels = r.f32(n_models * n_edges * side * side, "kernel").reshape(n_models, n_edges, side, side)
    r.finish()
    return ModelPool(kernels.astype(np.float64), edges, radius)


# cluster models

def write_clusters(path, model: ClusterModel):
    n, dim = model.centroids.shape
    with atomic_write(path) as fh:
        fh.write(CLUSTER_MAGIC + struct.pack("<III", VERSION, n, dim))
        fh.write(_f32_payload([model.tau], "temperature"))
        fh.write(_f32_payload(model.centroids, "centroid"))


def read_clusters(path) -> ClusterModel:
    r = _Reader(_read_bytes(path), path)
    r.magic(CLUSTER_MAGIC)
    n, dim = r.u32("L"), r.u32("dim")
    tau = float(r.f32(1, "temperature")[0])
    centroids = r.f32(n * dim, "centroid").reshape(n, dim)
    r.finish()
    return ClusterModel(centroids.astype(np.float64), tau)


# line-delimited text records

def _parse_points(raw, where, count=NUM_KEYPOINTS):
    if not isinstance(raw, list) or len(raw) != count:
        raise FormatError(f"{where}: expected {count} [x, y] pairs")
    pts = np.array(raw, dtype=np.float64) if all(isinstance(p, list) and len(p) == 2 for p in raw) else None
    if pts is None:
        raise FormatError(f"{where}: keypoints must be [x, y] pairs")
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{where}: non-finite keypoint coordinate")
    return pts


def _read_jsonl(path):
    text = Path(path).read_text()
    if not text.strip():
        raise FormatError(f"{path}: empty file")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line, parse_constant=lambda c: float(c))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def annotation_record(sample) -> dict:
    cx, cy, side = sample.box
    rec = {"sample_id": sample.sample_id,
           "box": {"cx": float(cx), "cy": float(cy), "side": float(side)},
           "keypoints": [[float(x), float(y)] for x, y in np.asarray(sample.pose)]}
    if getattr(sample, "cluster_id", None) is not None:
        rec["cluster_id"] = int(sample.cluster_id)
    if getattr(sample, "prototype_id", -1) is not None and sample.prototype_id >= 0:
        rec["prototype_id"] = int(sample.prototype_id)
    return rec


def write_annotations(path, samples):
    with atomic_write(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(annotation_record(s)) + "\n")


def read_annotations(path) -> list[dict]:
    """Records with ``keypoints`` as (21, 2) arrays and ``box`` as (cx, cy, side)."""
    out = []
    for lineno, rec in _read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        try:
            sid = rec["sample_id"]
            box = rec["box"]
            box = (float(box["cx"]), float(box["cy"]), float(box["side"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: missing or malformed field {exc}") from None
        if not isinstance(sid, str):
            raise FormatError(f"{where}: sample_id must be a string")
        if not all(math.isfinite(v) for v in box) or box[2] <= 0:
            raise FormatError(f"{where}: box must be finite with positive side")
        item = {"sample_id": sid, "box": box, "keypoints": _parse_points(rec.get("keypoints"), where)}
        for key in ("cluster_id", "prototype_id"):
            if key in rec:
                if not isinstance(rec[key], int):
                    raise FormatError(f"{where}: {key} must be an integer")
                item[key] = rec[key]
        out.append(item)
    return out


def write_predictions(path, records):
    with atomic_write(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_predictions(path) -> list[dict]:
    out = []
    for lineno, rec in _read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(rec, dict) or not isinstance(rec.get("sample_id"), str):
            raise FormatError(f"{where}: expected an object with a string sample_id")
        rec["keypoints"] = _parse_points(rec.get("keypoints"), where)
        out.append(rec)
    return out


# dataset directories

def heatmap_path(root, sample_id):
    return Path(root) / HEATMAP_DIR / f"{sample_id}.gmhm"


def write_dataset(root, samples):
    root = Path(root)
    for s in samples:
        write_heatmaps(heatmap_path(root, s.sample_id), s.unaries)
    write_annotations(root / ANNOTATIONS_FILE, samples)


def read_dataset(root):
    """Samples of a directory written by ``write_dataset``."""
    root = Path(root)
    ann = root / ANNOTATIONS_FILE
    if not ann.exists():
        raise FileNotFoundError(f"{ann} not found; is {root} a dataset directory?")
    samples = []
    for rec in read_annotations(ann):
        hm = heatmap_path(root, rec["sample_id"])
        if not hm.exists():
            raise FileNotFoundError(f"heatmap file {hm} for sample {rec['sample_id']!r} is missing")
        maps = read_heatmaps(hm)
        if maps.shape[0] != NUM_KEYPOINTS:
            raise FormatError(f"{hm}: {maps.shape[0]} layers, expected {NUM_KEYPOINTS}")
        samples.append(Sample(rec["sample_id"], rec["keypoints"], rec["box"], maps,
                              rec.get("prototype_id", -1), rec.get("cluster_id")))
    return samples
