"""ROI corruption by cross-sample substitution.

To probe how much a classifier leans on one ROI, its content is replaced with
the same ROI taken from other images, and the classifier is re-run on the
corrupted copies. Each replacement is weighted either uniformly or by a
frequency-normalized scheme: correlations between the substitute and the
original ROI are binned over [-1, 1], and a sample in bin i gets raw weight
1/(n_bins * count_i), which down-weights substitutes that are easy to draw
from the pool. Raw weights are renormalized to sum to 1 so the corrupted
prediction stays a convex combination of classifier outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import ChannelImage, DataError, Dataset, RoiMask, extract_roi, replace_roi
from .seeding import STREAM_SAMPLING, content_key, spawn_generator

# a classifier is anything mapping a list of images to per-image probabilities
PredictFn = Callable[[Sequence[ChannelImage]], np.ndarray]

WEIGHT_MODES = ("equal", "frequency_normalized")


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_roi: int = 100  # replacements drawn per (image, ROI)
    correlation_bins: int = 10  # equal-length intervals over [-1, 1]
    seed: int = 0
    weight_mode: str = "frequency_normalized"
    exclude_own_subject: bool = True

    def __post_init__(self) -> None:
        if self.samples_per_roi < 1:
            raise DataError(f"samples_per_roi must be >= 1, got {self.samples_per_roi}")
        if self.correlation_bins < 1:
            raise DataError(f"correlation_bins must be >= 1, got {self.correlation_bins}")
        if self.weight_mode not in WEIGHT_MODES:
            raise DataError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.seed < 0:
            raise DataError(f"seed must be non-negative, got {self.seed}")


def pearson(u: np.ndarray, v: np.ndarray) -> float:
    """Pearson correlation in [-1, 1]; 0 when either vector is constant."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError(f"pearson needs equal-length vectors, got {u.shape} and {v.shape}")
    if u.size < 2:
        raise DataError("pearson needs at least 2 elements")
    du = u - u.mean()
    dv = v - v.mean()
    denom = np.sqrt(np.sum(du * du) * np.sum(dv * dv))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.sum(du * dv) / denom, -1.0, 1.0))


def _pearson_rows(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Row-wise Pearson of a (k, m) matrix against one length-m vector."""
    dv = vec - vec.mean()
    sv = np.sqrt(np.sum(dv * dv))
    dm = mat - mat.mean(axis=1, keepdims=True)
    sm = np.sqrt(np.sum(dm * dm, axis=1))
    denom = sm * sv
    out = np.zeros(mat.shape[0])
    ok = denom > 0.0
    out[ok] = (dm[ok] @ dv) / denom[ok]
    return np.clip(out, -1.0, 1.0)


def bin_index(rho: float, n_bins: int) -> int:
    """Index of the correlation interval [-1 + 2i/n, -1 + 2(i+1)/n) holding rho.

    The top edge is closed: rho = 1 lands in the last bin.
    """
    if not -1.0 <= rho <= 1.0:
        raise DataError(f"correlation {rho} outside [-1, 1]")
    return min(int((rho + 1.0) / 2.0 * n_bins), n_bins - 1)


def frequency_weights(rhos: Sequence[float], n_bins: int) -> np.ndarray:
    """Frequency-normalized weights for a batch of sample correlations.

    Raw weights 1/(n_bins * count_in_bin) sum to (occupied bins)/n_bins, not
    to 1, so they are renormalized; every occupied bin then carries the same
    total mass regardless of how many samples fell into it.
    """
    rhos = np.asarray(rhos, dtype=np.float64)
    if rhos.size < 1:
        raise DataError("need at least one correlation")
    idx = np.minimum(((rhos + 1.0) / 2.0 * n_bins).astype(np.int64), n_bins - 1)
    if np.any(rhos < -1.0) or np.any(rhos > 1.0):
        raise DataError("correlations outside [-1, 1]")
    counts = np.bincount(idx, minlength=n_bins)
    raw = 1.0 / (n_bins * counts[idx])
    return raw / raw.sum()


def sample_weights(rhos: np.ndarray, cfg: SamplingConfig) -> np.ndarray:
    if cfg.weight_mode == "equal":
        return np.full(len(rhos), 1.0 / len(rhos))
    return frequency_weights(rhos, cfg.correlation_bins)


def draw_sample_pool(
    data: Dataset, roi: RoiMask, exclude_subject: str | None = None
) -> np.ndarray:
    """Stack this ROI's vector from every image, minus the excluded subject's.

    Returns a (pool_size, channels * roi_size) array.
    """
    rows = [
        extract_roi(img, roi)
        for img, sid in zip(data.images, data.subject_ids)
        if exclude_subject is None or sid != exclude_subject
    ]
    if not rows:
        raise DataError(
            f"empty sample pool for ROI {roi.roi_id} after excluding subject {exclude_subject!r}"
        )
    return np.stack(rows)


def weighted_sample_predictions(
    predict_fn: PredictFn,
    img: ChannelImage,
    roi: RoiMask,
    pool: np.ndarray,
    cfg: SamplingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ROI replacements for one image and score them.

    Draws samples_per_roi pool rows uniformly with replacement, correlates
    each against the image's own ROI vector, and weights them per
    weight_mode. Returns (weights, predictions), aligned per draw.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise DataError("sample pool must be a nonempty (n, veclen) array")
    own = extract_roi(img, roi)
    if pool.shape[1] != own.size:
        raise DataError(f"pool vectors have length {pool.shape[1]}, ROI needs {own.size}")
    draws = rng.integers(0, pool.shape[0], size=cfg.samples_per_roi)
    vecs = pool[draws]
    rhos = _pearson_rows(vecs, own)
    weights = sample_weights(rhos, cfg)
    replaced = [replace_roi(img, roi, vec) for vec in vecs]
    preds = np.asarray(predict_fn(replaced), dtype=np.float64)
    return weights, preds


def corrupted_prediction(
    predict_fn: PredictFn,
    img: ChannelImage,
    roi: RoiMask,
    pool: np.ndarray,
    cfg: SamplingConfig,
    rng: np.random.Generator,
) -> float:
    """Weighted classifier output over sampled ROI replacements (in [0, 1])."""
    weights, preds = weighted_sample_predictions(predict_fn, img, roi, pool, cfg, rng)
    return float(np.dot(weights, preds))


def roi_sample_rng(seed: int, roi: RoiMask, img: ChannelImage) -> np.random.Generator:
    """The draw stream for one (image, ROI) pair.

    Keyed on (seed, roi_id, image content digest): identical images get
    identical draws, and results cannot depend on how work is scheduled.
    """
    return spawn_generator(seed, STREAM_SAMPLING, roi.roi_id, *content_key(img.data))


def corrupted_distribution(
    predict_fn: PredictFn,
    images: Sequence[ChannelImage],
    roi: RoiMask,
    data: Dataset,
    cfg: SamplingConfig,
    subject_ids: Sequence[str] | None = None,
    base_seed: int | None = None,
) -> np.ndarray:
    """Corrupted prediction for each image, with order-independent determinism.

    Each image gets its own generator via roi_sample_rng. When
    exclude_own_subject is set, each image's pool omits images that share its
    subject id (subject_ids required in that case).
    """
    seed = cfg.seed if base_seed is None else base_seed
    exclude = cfg.exclude_own_subject and subject_ids is not None
    if cfg.exclude_own_subject and subject_ids is None:
        raise DataError("exclude_own_subject requires subject_ids for the corrupted images")
    pools: dict[str | None, np.ndarray] = {}
    out = np.empty(len(images))
    for i, img in enumerate(images):
        key = subject_ids[i] if exclude else None
        if key not in pools:
            pools[key] = draw_sample_pool(data, roi, exclude_subject=key)
        rng = roi_sample_rng(seed, roi, img)
        out[i] = corrupted_prediction(predict_fn, img, roi, pools[key], cfg, rng)
    return out
