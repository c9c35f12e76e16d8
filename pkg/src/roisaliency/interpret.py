"""ROI importance analysis from prediction-distribution shifts.

The pipeline: score every image with the classifier, corrupt one ROI at a
time across the whole group, and test whether corruption (a) collapses the
separation between the two classes' prediction distributions (JSD bootstrap
bounds) or swaps their medians — the "fooled" gate — and (b) shifts each
class's predictions significantly toward the opposite class (one-tailed
Wilcoxon, BH-FDR corrected across fooled ROIs). ROIs passing both shift
tests matter for both classes; one-sided shifts assign the ROI to a single
class.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corruption import PredictFn, SamplingConfig, corrupted_distribution
from .data import Atlas, ChannelImage, DataError, Dataset, atomic_write_text, atlas_rois
from .seeding import STREAM_BOOTSTRAP, spawn_generator
from .stats import JsdInterval, bh_fdr, bootstrap_jsd, wilcoxon_one_tailed

CATEGORIES = ("both", "class0", "class1", "none")

CSV_COLUMNS = [
    "roi_id",
    "jsd_o_lo",
    "jsd_o_hi",
    "jsd_c_lo",
    "jsd_c_hi",
    "median_c0",
    "median_c1",
    "fooled",
    "p0",
    "p1",
    "q0",
    "q1",
    "category",
]


@dataclass(frozen=True)
class InterpretConfig:
    alpha_jsd: float = 0.05
    alpha_w: float = 0.05
    bootstrap_replicates: int = 1000
    histogram_bins: int = 20
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self) -> None:
        for name, a in (("alpha_jsd", self.alpha_jsd), ("alpha_w", self.alpha_w)):
            if not 0.0 < a < 1.0:
                raise DataError(f"{name} must be in (0, 1), got {a}")
        if self.bootstrap_replicates < 100:
            raise DataError(f"bootstrap_replicates must be >= 100, got {self.bootstrap_replicates}")
        if self.histogram_bins < 2:
            raise DataError(f"histogram_bins must be >= 2, got {self.histogram_bins}")


@dataclass
class RoiReport:
    roi_id: int
    jsd_original: JsdInterval
    jsd_corrupted: JsdInterval
    median_c0: float
    median_c1: float
    fooled: bool
    p0: float | None = None
    p1: float | None = None
    q0: float | None = None
    q1: float | None = None
    category: str = "none"
    degenerate: bool = False


def _validate_probs(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError(f"{name} is empty")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise DataError(f"{name} has values outside [0, 1]")
    return values


def interpret_rois(
    predict_fn: PredictFn,
    images0: Sequence[ChannelImage],
    images1: Sequence[ChannelImage],
    atlas: Atlas,
    cfg: InterpretConfig,
    subject_ids0: Sequence[str] | None = None,
    subject_ids1: Sequence[str] | None = None,
    threads: int = 1,
) -> list[RoiReport]:
    """Categorize every atlas ROI as important for both classes, one, or neither.

    The sample pool for corruption is the union of both image groups. All
    randomness is derived from cfg.sampling.seed keyed by roi id and image
    index, so reports do not depend on thread count or ROI order; the output
    is sorted by roi id.
    """
    if len(images0) == 0 or len(images1) == 0:
        raise DataError("both classes need at least one image")
    images0 = list(images0)
    images1 = list(images1)
    n0 = len(images0)
    seed = cfg.sampling.seed

    if subject_ids0 is None or subject_ids1 is None:
        if cfg.sampling.exclude_own_subject:
            raise DataError("exclude_own_subject requires subject ids for both groups")
        subject_ids0 = [f"class0-{i}" for i in range(n0)]
        subject_ids1 = [f"class1-{i}" for i in range(len(images1))]
    all_images = images0 + images1
    all_subjects = list(subject_ids0) + list(subject_ids1)
    pool_data = Dataset(
        images=all_images,
        labels=[0] * n0 + [1] * len(images1),
        subject_ids=all_subjects,
    )

    p_o0 = _validate_probs(predict_fn(images0), "original class-0 predictions")
    p_o1 = _validate_probs(predict_fn(images1), "original class-1 predictions")
    jsd_o = bootstrap_jsd(
        p_o0,
        p_o1,
        replicates=cfg.bootstrap_replicates,
        bins=cfg.histogram_bins,
        alpha=cfg.alpha_jsd,
        rng=spawn_generator(seed, STREAM_BOOTSTRAP, 0),
    )

    def analyze(roi) -> RoiReport:
        corrupted = corrupted_distribution(
            predict_fn,
            all_images,
            roi,
            pool_data,
            cfg.sampling,
            subject_ids=all_subjects,
            base_seed=seed,
        )
        p_c0 = _validate_probs(corrupted[:n0], f"corrupted class-0 predictions (roi {roi.roi_id})")
        p_c1 = _validate_probs(corrupted[n0:], f"corrupted class-1 predictions (roi {roi.roi_id})")
        jsd_c = bootstrap_jsd(
            p_c0,
            p_c1,
            replicates=cfg.bootstrap_replicates,
            bins=cfg.histogram_bins,
            alpha=cfg.alpha_jsd,
            rng=spawn_generator(seed, STREAM_BOOTSTRAP, roi.roi_id),
        )
        med0 = float(np.median(p_c0))
        med1 = float(np.median(p_c1))
        fooled = jsd_c.upper < jsd_o.lower or med0 > med1
        report = RoiReport(
            roi_id=roi.roi_id,
            jsd_original=jsd_o,
            jsd_corrupted=jsd_c,
            median_c0=med0,
            median_c1=med1,
            fooled=fooled,
        )
        if fooled:
            res0 = wilcoxon_one_tailed(p_c0 - p_o0, "greater")  # class 0 pushed toward 1
            res1 = wilcoxon_one_tailed(p_c1 - p_o1, "less")  # class 1 pushed toward 0
            report.p0 = res0.p_value
            report.p1 = res1.p_value
            report.degenerate = res0.degenerate or res1.degenerate
        return report

    rois = atlas_rois(atlas)
    for roi in rois:
        roi.check_bounds(images0[0].spatial_shape)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(analyze, rois))
    else:
        reports = [analyze(roi) for roi in rois]
    reports.sort(key=lambda r: r.roi_id)

    # FDR across fooled ROIs, one family per shift direction
    fooled_reports = [r for r in reports if r.fooled]
    if fooled_reports:
        q0s, rej0 = bh_fdr([r.p0 for r in fooled_reports], cfg.alpha_w)
        q1s, rej1 = bh_fdr([r.p1 for r in fooled_reports], cfg.alpha_w)
        for r, q0, q1, s0, s1 in zip(fooled_reports, q0s, q1s, rej0, rej1):
            r.q0 = float(q0)
            r.q1 = float(q1)
            if s0 and s1:
                r.category = "both"
            elif s0:
                r.category = "class0"
            elif s1:
                r.category = "class1"
            else:
                r.category = "none"
    return reports


def interpret_dataset(
    predict_fn: PredictFn,
    data: Dataset,
    atlas: Atlas,
    cfg: InterpretConfig,
    threads: int = 1,
) -> list[RoiReport]:
    """Split a labeled dataset into its two classes and run interpret_rois."""
    data.require_both_classes()
    idx0 = data.class_indices(0)
    idx1 = data.class_indices(1)
    return interpret_rois(
        predict_fn,
        [data.images[i] for i in idx0],
        [data.images[i] for i in idx1],
        atlas,
        cfg,
        subject_ids0=[data.subject_ids[i] for i in idx0],
        subject_ids1=[data.subject_ids[i] for i in idx1],
        threads=threads,
    )


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

def _interval_dict(iv: JsdInterval) -> dict:
    return {"lower": iv.lower, "upper": iv.upper, "point": iv.point}


def reports_to_json(reports: Sequence[RoiReport]) -> str:
    rows = []
    for r in reports:
        rows.append(
            {
                "roi_id": r.roi_id,
                "jsd_original": _interval_dict(r.jsd_original),
                "jsd_corrupted": _interval_dict(r.jsd_corrupted),
                "median_c0": r.median_c0,
                "median_c1": r.median_c1,
                "fooled": r.fooled,
                "p0": r.p0,
                "p1": r.p1,
                "q0": r.q0,
                "q1": r.q1,
                "category": r.category,
                "degenerate": r.degenerate,
            }
        )
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def reports_to_csv(reports: Sequence[RoiReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.roi_id,
                repr(r.jsd_original.lower),
                repr(r.jsd_original.upper),
                repr(r.jsd_corrupted.lower),
                repr(r.jsd_corrupted.upper),
                repr(r.median_c0),
                repr(r.median_c1),
                "true" if r.fooled else "false",
                _cell(r.p0),
                _cell(r.p1),
                _cell(r.q0),
                _cell(r.q1),
                r.category,
            ]
        )
    return buf.getvalue()


def write_reports(reports: Sequence[RoiReport], directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / "roi_report.json"
    csv_path = directory / "roi_report.csv"
    atomic_write_text(json_path, reports_to_json(reports))
    atomic_write_text(csv_path, reports_to_csv(reports))
    return json_path, csv_path
