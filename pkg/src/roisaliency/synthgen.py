"""Synthetic striped-image dataset and the sampling-bias benchmark.

The images are a 3x3 grid of square patches, lettered A..I row-major. Only
patch B (top middle) carries class information; five patches hold identical
stripes in both classes, three are background. Class sizes are deliberately
skewed (900 vs 100 by default) so that equal-weight corruption of patch B
inherits the pool bias while frequency-normalized corruption does not: with
the default 10 correlation bins, same-class substitutes correlate ~+1 with
the original patch and cross-class substitutes ~-0.26, so exactly two bins
are occupied and each gets half the normalized mass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corruption import (
    PredictFn,
    SamplingConfig,
    draw_sample_pool,
    roi_sample_rng,
    weighted_sample_predictions,
)
from .data import Atlas, ChannelImage, DataError, Dataset, RoiMask, atlas_rois
from .nn.network import Network, build_synth_cnn
from .nn.train import TrainConfig, evaluate, train
from .seeding import STREAM_REPEAT, STREAM_SYNTH, spawn_generator, spawn_seed

PATCH_LETTERS = "ABCDEFGHI"
_STRIPE_CELLS = {0, 2, 4, 6, 8}  # A, C, E, G, I
_TARGET_CELL = 1  # B
TARGET_ROI_ID = _TARGET_CELL + 1


@dataclass(frozen=True)
class SynthConfig:
    image_side: int = 24
    patch_side: int = 8
    n_class0: int = 900
    n_class1: int = 100
    noise_sigma: float = 0.01
    seed: int = 0
    test_per_class: int = 100

    def __post_init__(self) -> None:
        if self.patch_side < 4 or self.patch_side % 2:
            raise DataError(f"patch_side must be an even integer >= 4, got {self.patch_side}")
        if self.image_side != 3 * self.patch_side:
            raise DataError(
                f"image_side must be 3*patch_side for the 3x3 patch grid, got {self.image_side}"
            )
        if min(self.n_class0, self.n_class1, self.test_per_class) < 1:
            raise DataError("class counts and test_per_class must be >= 1")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise DataError(f"seed must be non-negative, got {self.seed}")


def stripe_patch(side: int) -> np.ndarray:
    """Single-pixel horizontal stripes: rows 0, 2, 4, ... set to 1."""
    patch = np.zeros((side, side))
    patch[0::2, :] = 1.0
    return patch


def band_patch(side: int) -> np.ndarray:
    """A solid horizontal band covering rows 1 .. side/2 - 1."""
    patch = np.zeros((side, side))
    patch[1 : side // 2, :] = 1.0
    return patch


def class_template(cfg: SynthConfig, label: int) -> np.ndarray:
    """Noise-free image for one class."""
    side = cfg.patch_side
    img = np.zeros((cfg.image_side, cfg.image_side))
    for cell in range(9):
        r, c = divmod(cell, 3)
        sl = (slice(r * side, (r + 1) * side), slice(c * side, (c + 1) * side))
        if cell in _STRIPE_CELLS:
            img[sl] = stripe_patch(side)
        elif cell == _TARGET_CELL:
            img[sl] = band_patch(side) if label == 1 else stripe_patch(side)
    return img


def make_atlas(cfg: SynthConfig) -> Atlas:
    side = cfg.patch_side
    labels = np.zeros((cfg.image_side, cfg.image_side), dtype=np.int64)
    for cell in range(9):
        r, c = divmod(cell, 3)
        labels[r * side : (r + 1) * side, c * side : (c + 1) * side] = cell + 1
    return Atlas(labels=labels)


def roi_letter(roi_id: int) -> str:
    if not 1 <= roi_id <= 9:
        raise DataError(f"synthetic atlas has ROIs 1..9, got {roi_id}")
    return PATCH_LETTERS[roi_id - 1]


def _make_images(cfg: SynthConfig, counts: tuple[int, int], prefix: str, rng) -> Dataset:
    templates = {0: class_template(cfg, 0), 1: class_template(cfg, 1)}
    order = np.repeat([0, 1], counts)
    order = order[rng.permutation(order.size)]
    images, labels, subjects = [], [], []
    for i, label in enumerate(order):
        noise = rng.normal(0.0, cfg.noise_sigma, size=templates[0].shape) if cfg.noise_sigma else 0.0
        images.append(ChannelImage((templates[int(label)] + noise)[None]))
        labels.append(int(label))
        subjects.append(f"{prefix}-{i:05d}")
    meta = {
        "generator": "synthetic-stripes",
        "image_side": cfg.image_side,
        "patch_side": cfg.patch_side,
        "noise_sigma": cfg.noise_sigma,
    }
    return Dataset(images=images, labels=labels, subject_ids=subjects, manifest=meta)


def generate_synthetic(cfg: SynthConfig) -> tuple[Dataset, Dataset, Atlas]:
    """Train set (n_class0 + n_class1 images), test set, and the 9-patch atlas."""
    train_rng = spawn_generator(cfg.seed, STREAM_SYNTH, 0)
    test_rng = spawn_generator(cfg.seed, STREAM_SYNTH, 1)
    train_ds = _make_images(cfg, (cfg.n_class0, cfg.n_class1), "train", train_rng)
    test_ds = _make_images(cfg, (cfg.test_per_class, cfg.test_per_class), "test", test_rng)
    return train_ds, test_ds, make_atlas(cfg)


def target_roi(atlas: Atlas) -> RoiMask:
    """The discriminative patch's mask (patch B)."""
    for mask in atlas_rois(atlas):
        if mask.roi_id == TARGET_ROI_ID:
            return mask
    raise DataError(f"atlas has no ROI {TARGET_ROI_ID}")


def weighted_misclassification(
    predict_fn: PredictFn,
    images: Sequence[ChannelImage],
    labels: Sequence[int],
    roi: RoiMask,
    pool: np.ndarray,
    cfg: SamplingConfig,
    seed: int | None = None,
) -> tuple[float, float]:
    """Per-class weighted misclassification rate under ROI corruption.

    For each image, the drawn replacements are scored and thresholded at 0.5;
    the image's rate is the weight-averaged flip indicator, and the returned
    pair averages those rates over class-0 and class-1 images respectively.
    """
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images vs {len(labels)} labels")
    labels = [int(l) for l in labels]
    if 0 not in labels or 1 not in labels:
        raise DataError("need images from both classes")
    seed = cfg.seed if seed is None else seed
    per_class: dict[int, list[float]] = {0: [], 1: []}
    for img, label in zip(images, labels):
        rng = roi_sample_rng(seed, roi, img)
        weights, preds = weighted_sample_predictions(predict_fn, img, roi, pool, cfg, rng)
        wrong = (preds > 0.5).astype(np.float64) != float(label)
        per_class[label].append(float(np.dot(weights, wrong)))
    return float(np.mean(per_class[0])), float(np.mean(per_class[1]))


@dataclass
class Table1Row:
    weight_mode: str
    class0_mean: float
    class0_std: float
    class1_mean: float
    class1_std: float


@dataclass
class Table1Result:
    rows: list[Table1Row]
    repeats_requested: int
    repeats_completed: int
    diagnostics: list[str]

    def as_text(self) -> str:
        lines = [f"{'mode':<22}{'class 0':>16}{'class 1':>16}"]
        for row in self.rows:
            c0 = f"{row.class0_mean:.2f}±{row.class0_std:.2f}"
            c1 = f"{row.class1_mean:.2f}±{row.class1_std:.2f}"
            lines.append(f"{row.weight_mode:<22}{c0:>16}{c1:>16}")
        lines.append(
            f"repeats: {self.repeats_completed}/{self.repeats_requested} completed"
        )
        return "\n".join(lines)


def run_table1(
    synth_cfg: SynthConfig,
    sampling_cfg: SamplingConfig,
    repeats: int,
    train_cfg: TrainConfig | None = None,
) -> Table1Result:
    """Corrupt the discriminative patch under both weighting modes, many seeds.

    Per repeat: generate data, train the small CNN to convergence, draw the
    replacement pool from the (biased) training set with subject exclusion
    off, and record weighted misclassification rates on the test images. A
    repeat whose classifier does not reach 100% train and test accuracy is
    skipped with a diagnostic rather than polluting the averages.
    """
    if repeats < 1:
        raise DataError(f"repeats must be >= 1, got {repeats}")
    train_cfg = train_cfg or TrainConfig()
    rates: dict[str, list[tuple[float, float]]] = {"equal": [], "frequency_normalized": []}
    diagnostics: list[str] = []
    completed = 0
    for rep in range(repeats):
        data_seed = spawn_seed(synth_cfg.seed, STREAM_REPEAT, rep, 0)
        net_seed = spawn_seed(synth_cfg.seed, STREAM_REPEAT, rep, 1)
        samp_seed = spawn_seed(synth_cfg.seed, STREAM_REPEAT, rep, 2)

        train_ds, test_ds, atlas = generate_synthetic(replace(synth_cfg, seed=data_seed))
        net = build_synth_cnn((1, synth_cfg.image_side, synth_cfg.image_side), seed=net_seed)
        net, _ = train(net, train_ds, test_ds, replace(train_cfg, seed=net_seed))
        _, train_acc = evaluate(net, train_ds.stacked(), train_ds.label_array())
        _, test_acc = evaluate(net, test_ds.stacked(), test_ds.label_array())
        if train_acc < 1.0 or test_acc < 1.0:
            diagnostics.append(
                f"repeat {rep}: classifier not perfect (train {train_acc:.3f}, test {test_acc:.3f}); skipped"
            )
            continue

        roi = target_roi(atlas)
        pool = draw_sample_pool(train_ds, roi, exclude_subject=None)
        for mode in ("equal", "frequency_normalized"):
            cfg = replace(sampling_cfg, weight_mode=mode, seed=samp_seed, exclude_own_subject=False)
            rates[mode].append(
                weighted_misclassification(
                    net.predict_batch, test_ds.images, test_ds.labels, roi, pool, cfg
                )
            )
        completed += 1

    rows = []
    for mode in ("equal", "frequency_normalized"):
        got = np.asarray(rates[mode]) if rates[mode] else np.zeros((0, 2))
        if got.size == 0:
            rows.append(Table1Row(mode, float("nan"), 0.0, float("nan"), 0.0))
            continue
        means = got.mean(axis=0)
        stds = got.std(axis=0, ddof=1) if len(got) > 1 else np.zeros(2)
        rows.append(Table1Row(mode, float(means[0]), float(stds[0]), float(means[1]), float(stds[1])))
    return Table1Result(
        rows=rows,
        repeats_requested=repeats,
        repeats_completed=completed,
        diagnostics=diagnostics,
    )
