"""Segmentation robustness metrics: IoU, mIoU, class counts, bootstrap CIs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import MASK_SUFFIXES, pair_by_stem, read_labels
from .warp import DEFAULT_IGNORE_LABEL, LabelMask

BOOTSTRAP_RESAMPLES = 10_000


class MetricsError(ValueError):
    pass


class PairingError(MetricsError):
    pass


@dataclass(frozen=True)
class ConfusionAccumulator:
    """Per-class intersection, predicted area and ground-truth area counts.

    Accumulators are values: :func:`accumulate` returns a new one and ``+``
    merges two of the same class universe.
    """

    num_classes: int
    intersection: np.ndarray = field(default=None, repr=False)
    pred_area: np.ndarray = field(default=None, repr=False)
    gt_area: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("intersection", "pred_area", "gt_area"):
            value = getattr(self, name)
            if value is None:
                value = np.zeros(self.num_classes, dtype=np.int64)
            value = np.asarray(value, dtype=np.int64)
            if value.shape != (self.num_classes,):
                raise MetricsError(f"{name} must have {self.num_classes} entries")
            object.__setattr__(self, name, value)

    def __add__(self, other: ConfusionAccumulator) -> ConfusionAccumulator:
        if other.num_classes != self.num_classes:
            raise MetricsError("cannot merge accumulators over different class universes")
        return ConfusionAccumulator(
            self.num_classes,
            self.intersection + other.intersection,
            self.pred_area + other.pred_area,
            self.gt_area + other.gt_area,
        )

    @property
    def union(self) -> np.ndarray:
        return self.pred_area + self.gt_area - self.intersection

    def iou(self) -> np.ndarray:
        """Per-class IoU, NaN where the union is empty."""
        union = self.union
        out = np.full(self.num_classes, np.nan)
        present = union > 0
        out[present] = self.intersection[present] / union[present]
        return out

    def equals(self, other: ConfusionAccumulator) -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.intersection, other.intersection)
            and np.array_equal(self.pred_area, other.pred_area)
            and np.array_equal(self.gt_area, other.gt_area)
        )


def _labels(mask):
    if isinstance(mask, LabelMask):
        return mask.labels, mask.ignore_label
    return np.asarray(mask), None


def accumulate(pred, gt, acc: ConfusionAccumulator, ignore_label: int | None = None) -> ConfusionAccumulator:
    """Fold one prediction/ground-truth pair into ``acc``.

    Pixels whose ground truth is the ignore label are skipped.  A predicted
    ignore label counts as "no class" (a miss for the ground-truth class).
    """
    pred_labels, pred_ignore = _labels(pred)
    gt_labels, gt_ignore = _labels(gt)
    if ignore_label is None:
        ignore_label = gt_ignore if gt_ignore is not None else DEFAULT_IGNORE_LABEL
    if pred_labels.shape != gt_labels.shape:
        raise MetricsError(f"prediction {pred_labels.shape} and ground truth {gt_labels.shape} differ in size")
    c = acc.num_classes
    gt_flat = gt_labels.reshape(-1).astype(np.int64)
    pred_flat = pred_labels.reshape(-1).astype(np.int64)
    valid = gt_flat != ignore_label
    gt_flat = gt_flat[valid]
    pred_flat = pred_flat[valid]
    predicted = pred_flat != ignore_label
    for name, values in (("ground truth", gt_flat), ("prediction", pred_flat[predicted])):
        if values.size and (values.min() < 0 or values.max() >= c):
            bad = values[(values < 0) | (values >= c)][0]
            raise MetricsError(f"{name} label {bad} is outside the class universe [0, {c})")
    hit = gt_flat[pred_flat == gt_flat]
    return acc + ConfusionAccumulator(
        c,
        np.bincount(hit, minlength=c),
        np.bincount(pred_flat[predicted], minlength=c),
        np.bincount(gt_flat, minlength=c),
    )


def _mean(values) -> float:
    # correctly rounded sum, so the result does not depend on summation order
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def miou(acc: ConfusionAccumulator) -> float:
    """Mean IoU over classes with a non-empty union."""
    ious = acc.iou()
    present = ~np.isnan(ious)
    if not present.any():
        raise MetricsError("no class has a non-empty union; mIoU is undefined")
    return _mean(ious[present])


def classes_per_image(mask, ignore_label: int | None = None) -> int:
    labels, own_ignore = _labels(mask)
    if ignore_label is None:
        ignore_label = own_ignore if own_ignore is not None else DEFAULT_IGNORE_LABEL
    values = np.unique(labels)
    return int(np.count_nonzero(values != ignore_label))


def image_iou(pred, gt, num_classes: int, ignore_label: int | None = None) -> float:
    """Mean IoU over the classes present in this image's ground truth.

    NaN when the ground truth holds only ignore pixels.
    """
    acc = accumulate(pred, gt, ConfusionAccumulator(num_classes), ignore_label)
    present = acc.gt_area > 0
    if not present.any():
        return math.nan
    return _mean(acc.intersection[present] / acc.union[present])


def iou_decrease(baseline_miou: float, distorted_miou: float) -> float:
    """Signed drop in percentage points; negative means the score improved."""
    for value in (baseline_miou, distorted_miou):
        if not 0.0 <= value <= 1.0:
            raise MetricsError(f"mIoU values must lie in [0, 1], got {value}")
    return (baseline_miou - distorted_miou) * 100.0


def iou_difference_ci(
    baseline,
    distorted,
    resamples: int = BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Mean paired decrease and its percentile-bootstrap interval.

    Inputs are per-image IoUs in [0, 1]; outputs are percentage points.
    The interval takes symmetric order statistics of the resampled means,
    so swapping the arguments negates it exactly.
    """
    b = np.asarray(baseline, dtype=np.float64)
    d = np.asarray(distorted, dtype=np.float64)
    if b.shape != d.shape or b.ndim != 1:
        raise MetricsError("baseline and distorted IoUs must be paired 1-D sequences")
    if b.size < 2:
        raise MetricsError("need at least two paired images for a confidence interval")
    diffs = (b - d) * 100.0
    n = diffs.size
    rng = np.random.Generator(np.random.PCG64(seed))
    means = np.empty(resamples, dtype=np.float64)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, resamples, chunk):
        stop = min(resamples, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = diffs[idx].sum(axis=1) / n
    means.sort()
    k = int(math.floor((1.0 - level) / 2.0 * resamples))
    return float(diffs.sum() / n), float(means[k]), float(means[resamples - 1 - k])


@dataclass
class RobustnessReport:
    """Evaluation of one prediction set against one ground-truth set.

    ``iou_decrease`` and ``ci95`` are filled in by :func:`compare_reports`
    and refer to the mean per-image IoU decrease against a baseline.
    """

    class_count: int
    ignore_label: int
    per_class_iou: list
    miou: float
    classes_per_image_pred: float
    classes_per_image_gt: float
    n_images: int
    per_image_iou: dict
    sigma: float | None = None
    label: str | None = None
    iou_decrease: float | None = None
    ci95: tuple | None = None
    counts: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "sigma": self.sigma,
            "class_count": self.class_count,
            "ignore_label": self.ignore_label,
            "n_images": self.n_images,
            "miou": self.miou,
            "classes_per_image_pred": self.classes_per_image_pred,
            "classes_per_image_gt": self.classes_per_image_gt,
            "iou_decrease": self.iou_decrease,
            "ci95": list(self.ci95) if self.ci95 is not None else None,
            "per_class_iou": self.per_class_iou,
            "per_image_iou": self.per_image_iou,
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RobustnessReport:
        ci = data.get("ci95")
        return cls(
            class_count=int(data["class_count"]),
            ignore_label=int(data["ignore_label"]),
            per_class_iou=list(data["per_class_iou"]),
            miou=float(data["miou"]),
            classes_per_image_pred=float(data["classes_per_image_pred"]),
            classes_per_image_gt=float(data["classes_per_image_gt"]),
            n_images=int(data["n_images"]),
            per_image_iou=dict(data["per_image_iou"]),
            sigma=data.get("sigma"),
            label=data.get("label"),
            iou_decrease=data.get("iou_decrease"),
            ci95=tuple(ci) if ci is not None else None,
            counts=data.get("counts", {}),
        )

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> RobustnessReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self) -> str:
        """One row per class followed by summary rows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "class", "iou", "intersection", "union", "gt_area"])
        inter = self.counts.get("intersection", [None] * self.class_count)
        union = self.counts.get("union", [None] * self.class_count)
        gt_area = self.counts.get("gt_area", [None] * self.class_count)
        for c, value in enumerate(self.per_class_iou):
            writer.writerow(["class", c, _fmt(value), _fmt(inter[c]), _fmt(union[c]), _fmt(gt_area[c])])
        writer.writerow(["summary", "miou", _fmt(self.miou), "", "", ""])
        writer.writerow(["summary", "classes_per_image_pred", _fmt(self.classes_per_image_pred), "", "", ""])
        writer.writerow(["summary", "classes_per_image_gt", _fmt(self.classes_per_image_gt), "", "", ""])
        writer.writerow(["summary", "n_images", self.n_images, "", "", ""])
        if self.iou_decrease is not None:
            writer.writerow(["summary", "iou_decrease", _fmt(self.iou_decrease), "", "", ""])
            writer.writerow(["summary", "ci95_lo", _fmt(self.ci95[0]), "", "", ""])
            writer.writerow(["summary", "ci95_hi", _fmt(self.ci95[1]), "", "", ""])
        return buf.getvalue()


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _nan_to_none(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


def evaluate_run(
    pred_dir,
    gt_dir,
    class_count: int,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
    sigma: float | None = None,
    label: str | None = None,
) -> RobustnessReport:
    """Score every prediction mask against the ground-truth mask of the same id."""
    pairs, problems = pair_by_stem(gt_dir, pred_dir, MASK_SUFFIXES, MASK_SUFFIXES)
    if problems:
        raise PairingError("; ".join(problems))
    if not pairs:
        raise PairingError(f"no mask pairs found under {gt_dir} and {pred_dir}")

    acc = ConfusionAccumulator(class_count)
    per_image = {}
    pred_classes = []
    gt_classes = []
    for image_id, gt_path, pred_path in pairs:
        gt = read_labels(gt_path)
        pred = read_labels(pred_path)
        if gt.shape != pred.shape:
            raise PairingError(f"{image_id}: prediction {pred.shape} and ground truth {gt.shape} differ in size")
        one = accumulate(pred, gt, ConfusionAccumulator(class_count), ignore_label)
        acc = acc + one
        present = one.gt_area > 0
        if present.any():
            per_image[image_id] = _mean(one.intersection[present] / one.union[present])
        else:
            per_image[image_id] = None
        pred_classes.append(classes_per_image(pred, ignore_label))
        gt_classes.append(classes_per_image(gt, ignore_label))

    return RobustnessReport(
        class_count=class_count,
        ignore_label=ignore_label,
        per_class_iou=[_nan_to_none(float(v)) for v in acc.iou()],
        miou=miou(acc),
        classes_per_image_pred=float(np.mean(pred_classes)),
        classes_per_image_gt=float(np.mean(gt_classes)),
        n_images=len(pairs),
        per_image_iou=per_image,
        sigma=sigma,
        label=label,
        counts={
            "intersection": acc.intersection.tolist(),
            "union": acc.union.tolist(),
            "gt_area": acc.gt_area.tolist(),
            "pred_area": acc.pred_area.tolist(),
        },
    )


def paired_ious(baseline: RobustnessReport, distorted: RobustnessReport):
    """Per-image IoU lists aligned by id; images undefined in either are dropped."""
    missing = sorted(set(baseline.per_image_iou) ^ set(distorted.per_image_iou))
    if missing:
        shown = ", ".join(missing[:5]) + (" ..." if len(missing) > 5 else "")
        raise PairingError(f"{len(missing)} image id(s) are not present in both reports: {shown}")
    ids = [
        i
        for i in sorted(baseline.per_image_iou)
        if baseline.per_image_iou[i] is not None and distorted.per_image_iou[i] is not None
    ]
    return (
        ids,
        [baseline.per_image_iou[i] for i in ids],
        [distorted.per_image_iou[i] for i in ids],
    )


def compare_reports(
    baseline: RobustnessReport,
    distorted: RobustnessReport,
    resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> dict:
    """Decrease of ``distorted`` relative to ``baseline`` with its 95% CI.

    ``miou_decrease`` uses the dataset-level mIoUs; ``iou_decrease`` is the
    mean of the paired per-image decreases, which the interval brackets.
    """
    if baseline.class_count != distorted.class_count:
        raise PairingError("reports were computed over different class universes")
    ids, b, d = paired_ious(baseline, distorted)
    mean, lo, hi = iou_difference_ci(b, d, resamples=resamples, seed=seed)
    distorted.iou_decrease = mean
    distorted.ci95 = (lo, hi)
    return {
        "label": distorted.label,
        "sigma": distorted.sigma,
        "miou": distorted.miou,
        "miou_decrease": iou_decrease(baseline.miou, distorted.miou),
        "iou_decrease": mean,
        "ci_lo": lo,
        "ci_hi": hi,
        "n_images": len(ids),
        "classes_per_image_pred": distorted.classes_per_image_pred,
    }
