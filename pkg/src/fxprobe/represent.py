"""Feature assembly, z-scoring, PCA and parameter-sweep trajectory metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fxprobe.encoders import EmbeddingSequence
from fxprobe.errors import DataError, DimensionError, ValidationError

NORM_EPS = 1e-8
STRAIGHT_RTOL = 1e-12


def time_average(seq: EmbeddingSequence | np.ndarray) -> np.ndarray:
    data = seq.data if isinstance(seq, EmbeddingSequence) else np.asarray(seq)
    return data.astype(np.float64).mean(axis=0)


def flatten(seq: EmbeddingSequence | np.ndarray) -> np.ndarray:
    """Row-major concatenation of all frames."""
    data = seq.data if isinstance(seq, EmbeddingSequence) else np.asarray(seq)
    return data.astype(np.float64).reshape(-1)


REDUCERS = {"timeavg": time_average, "flatten": flatten}


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    clip_ids: list[str]
    mode: str

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.clip_ids):
            raise DimensionError("one feature row per clip id is required")
        if self.mode not in REDUCERS:
            raise ValidationError(f"unknown feature mode {self.mode!r}")
        if not np.all(np.isfinite(self.rows)):
            raise ValidationError("feature matrix contains non-finite values")

    @classmethod
    def from_sequences(cls, sequences: dict[str, EmbeddingSequence] | list[tuple[str, EmbeddingSequence]],
                       mode: str) -> "FeatureMatrix":
        items = list(sequences.items()) if isinstance(sequences, dict) else list(sequences)
        if not items:
            raise DataError("no sequences")
        reduce = REDUCERS[mode]
        rows = [reduce(s) for _, s in items]
        widths = {r.size for r in rows}
        if len(widths) != 1:
            raise DataError(f"sequences reduce to different widths {sorted(widths)}")
        return cls(np.stack(rows), [k for k, _ in items], mode)


# ---------------------------------------------------------------- z-scoring


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def fit_norm(train: np.ndarray) -> NormStats:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise DataError("normalisation statistics need at least two training rows")
    return NormStats(train.mean(axis=0), np.maximum(train.std(axis=0), NORM_EPS))


def apply_norm(stats: NormStats, matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[-1] != stats.mean.size:
        raise DimensionError(f"expected {stats.mean.size} features, got {matrix.shape[-1]}")
    return (matrix - stats.mean) / stats.std


def invert_norm(stats: NormStats, matrix: np.ndarray) -> np.ndarray:
    return np.asarray(matrix) * stats.std + stats.mean


# ---------------------------------------------------------------------- PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def explained_ratio(self, total_variance: float) -> np.ndarray:
        return self.explained_variance / total_variance


def pca_fit(matrix: np.ndarray, k: int) -> PcaModel:
    """Top-``k`` principal axes via SVD of the centred data.

    Each component is sign-fixed so its largest-magnitude entry is positive.
    Explained variance uses the ``n - 1`` denominator.
    """
    x = np.asarray(matrix, dtype=np.float64)
    n, f = x.shape
    if not 1 <= k <= min(n, f):
        raise DimensionError(f"k={k} must lie in [1, min(rows, features)={min(n, f)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    var = s[:k] ** 2 / max(n - 1, 1)
    return PcaModel(mean, comps, var)


def pca_transform(model: PcaModel, matrix: np.ndarray) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape[-1] != model.mean.size:
        raise DimensionError(f"expected {model.mean.size} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return model.mean + np.asarray(scores) @ model.components


# -------------------------------------------------------------- trajectories


@dataclass
class TrajectoryReport:
    arc_length: float
    chord_length: float
    straightness: float
    pca3_path: np.ndarray | None


def trajectory_metrics(vectors, pca: PcaModel | None = None) -> TrajectoryReport:
    """Arc length, chord length and their ratio for an ordered point path."""
    pts = np.asarray(vectors, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DimensionError("a trajectory needs at least two points")
    arc = math.fsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    chord = float(np.linalg.norm(pts[-1] - pts[0]))
    # a deficit within round-off means the steps are collinear
    if arc - chord <= STRAIGHT_RTOL * arc:
        straight = 1.0
    else:
        straight = chord / arc
    path = pca_transform(pca, pts) if pca is not None else None
    return TrajectoryReport(arc, chord, straight, path)
