"""Percentage of correct keypoints relative to a square hand box."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_THRESHOLDS = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)


@dataclass(frozen=True)
class PckConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if not t or t[0] <= 0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be positive and strictly increasing")
        object.__setattr__(self, "thresholds", t)


@dataclass
class PckReport:
    thresholds: tuple
    pck: np.ndarray                 # (T,) fraction correct per threshold
    per_keypoint: np.ndarray        # (T, K)
    n_samples: int
    mpck: float = field(init=False)

    def __post_init__(self):
        self.mpck = float(np.mean(self.pck))

    def as_record(self, name=None):
        rec = {"thresholds": list(self.thresholds), "pck": [float(v) for v in self.pck],
               "mpck": self.mpck, "n_samples": self.n_samples,
               "per_keypoint": [[float(v) for v in row] for row in self.per_keypoint]}
        if name is not None:
            rec["name"] = name
        return rec


def pck(predictions, truths, boxes, cfg: PckConfig | None = None) -> PckReport:
    """A keypoint counts as correct at ``s`` when its error is at most ``s * side``.

    ``boxes`` holds ``(cx, cy, side)`` per sample, or just the side length.
    """
    cfg = cfg or PckConfig()
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truths, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"{pred.shape} predictions vs {truth.shape} ground truths")
    if len(boxes) != len(pred):
        raise ValueError(f"{len(boxes)} boxes for {len(pred)} samples")
    sides = np.array([b[2] if np.ndim(b) else b for b in boxes], dtype=np.float64)
    dist = np.linalg.norm(pred - truth, axis=-1) / sides[:, None]
    thr = np.asarray(cfg.thresholds)
    correct = dist[None] <= thr[:, None, None]
    return PckReport(cfg.thresholds, correct.mean(axis=(1, 2)), correct.mean(axis=1), len(pred))


def format_table(reports: dict) -> str:
    """Aligned text table with one column per named report."""
    names = list(reports)
    thresholds = reports[names[0]].thresholds
    width = max(10, *(len(n) + 2 for n in names))
    lines = ["sigma".ljust(8) + "".join(n.rjust(width) for n in names)]
    for t_idx, t in enumerate(thresholds):
        lines.append(f"{t:<8g}" + "".join(f"{100 * reports[n].pck[t_idx]:{width}.2f}" for n in names))
    lines.append("mPCK".ljust(8) + "".join(f"{100 * reports[n].mpck:{width}.2f}" for n in names))
    return "\n".join(lines)
