"""Distribution-matching metrics for generated datasets.

Synthetic points are scored by the mean per-class variance and per-class,
per-coordinate 1-Wasserstein distances, split by spread.  Calorimeter images
are reduced to five summary channels whose pooled distributions are compared
with the 1-Wasserstein distance.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .datasets import CALO, N_CLASSES, POINTS2D, ConditionedDataset, group_by_condition
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

CHANNELS = ("total_count", "centroid_row", "centroid_col", "radial_second_moment", "occupancy")
OCCUPANCY_THRESHOLD = 1.0


def wasserstein_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions.

    Equal sizes use the sorted-matching formula, otherwise the CDF integral.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("wasserstein_1d needs non-empty inputs")
    if a.size == b.size:
        return float(np.abs(a - b).mean())
    return wasserstein_1d_cdf(a, b)


def wasserstein_1d_cdf(a, b) -> float:
    """CDF-integral form for any sizes; kept separate from the sorted-matching path."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("wasserstein_1d needs non-empty inputs")
    support = np.union1d(a, b)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * np.diff(support)))


def _spread_groups(points: ConditionedDataset, spread: bool) -> Dict[int, np.ndarray]:
    if points.kind != POINTS2D:
        raise InvalidArgumentError("expected a points2d dataset")
    if not points.is_grouped:
        points = group_by_condition(points)
    out = {}
    for _, idx in points.iter_groups():
        cls, s = points.conditions[idx[0]]
        if bool(s) == bool(spread):
            out[int(cls)] = idx
    return out


def class_variances(points: ConditionedDataset, spread: bool) -> Dict[int, float]:
    """Mean per-coordinate sample variance of each class at the given spread."""
    groups = _spread_groups(points, spread)
    out = {}
    for cls, idx in sorted(groups.items()):
        if len(idx) < 2:
            warnings.warn(f"class {cls} (spread={int(spread)}) has <2 points; excluded")
            continue
        out[cls] = float(points.samples[idx].astype(np.float64).var(axis=0, ddof=1).mean())
    return out


def mean_class_variance(points: ConditionedDataset, spread: bool) -> float:
    per_class = class_variances(points, spread)
    if not per_class:
        raise InvalidArgumentError(f"no class with >=2 points at spread={int(spread)}")
    return float(np.mean(list(per_class.values())))


def coordinate_wasserstein(real: ConditionedDataset, generated: ConditionedDataset, spread: bool) -> float:
    """Per-class W1 on x and y, averaged over coordinates and shared classes."""
    rg, gg = _spread_groups(real, spread), _spread_groups(generated, spread)
    shared = sorted(set(rg) & set(gg))
    if not shared:
        raise InvalidArgumentError(f"no shared classes at spread={int(spread)}")
    dists = [
        wasserstein_1d(real.samples[rg[c], j], generated.samples[gg[c], j])
        for c in shared
        for j in range(2)
    ]
    return float(np.mean(dists))


def extract_channels(image) -> np.ndarray:
    """Five summary channels of a non-negative image.

    total count, intensity-weighted centroid (row, col), intensity-weighted
    mean squared distance from the centroid, and number of pixels above
    ``OCCUPANCY_THRESHOLD``.  An all-zero image has its centroid at the grid
    center.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidArgumentError("image must be 2-D")
    return extract_channels_batch(img[None])[0]


def extract_channels_batch(images) -> np.ndarray:
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 3:
        raise InvalidArgumentError("images must be a (n, H, W) stack")
    if np.any(imgs < 0):
        raise InvalidArgumentError("images must be non-negative")
    n, h, w = imgs.shape
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    total = imgs.sum(axis=(1, 2))
    safe = np.where(total > 0, total, 1.0)
    row_mass = imgs.sum(axis=2)
    col_mass = imgs.sum(axis=1)
    crow = np.where(total > 0, row_mass @ rows / safe, (h - 1) / 2)
    ccol = np.where(total > 0, col_mass @ cols / safe, (w - 1) / 2)
    dr2 = (rows[None, :] - crow[:, None]) ** 2
    dc2 = (cols[None, :] - ccol[:, None]) ** 2
    second = ((row_mass * dr2).sum(axis=1) + (col_mass * dc2).sum(axis=1)) / safe
    second = np.where(total > 0, second, 0.0)
    occupancy = (imgs > OCCUPANCY_THRESHOLD).sum(axis=(1, 2)).astype(np.float64)
    return np.column_stack([total, crow, ccol, second, occupancy])


def channel_wasserstein(real_channels: np.ndarray, gen_channels: np.ndarray) -> Dict[str, float]:
    return {
        name: wasserstein_1d(real_channels[:, j], gen_channels[:, j])
        for j, name in enumerate(CHANNELS)
    }


@dataclass
class EvalReport:
    kind: str
    n_real: int
    n_generated: int
    variance: Dict[str, Dict[str, float]] = field(default_factory=dict)
    class_variance: Dict[str, Dict[str, float]] = field(default_factory=dict)
    wasserstein: Dict[str, float] = field(default_factory=dict)
    channel_wasserstein: Dict[str, float] = field(default_factory=dict)
    mean_channel_wasserstein: Optional[float] = None
    zero_images: int = 0
    fingerprint: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_real": self.n_real,
            "n_generated": self.n_generated,
            "variance": self.variance,
            "class_variance": self.class_variance,
            "wasserstein": self.wasserstein,
            "channel_wasserstein": self.channel_wasserstein,
            "mean_channel_wasserstein": self.mean_channel_wasserstein,
            "zero_images": self.zero_images,
            "fingerprint": self.fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def rows(self) -> List[tuple]:
        """(section, key, value) triples in a stable order."""
        out = []
        for name in sorted(self.variance):
            for spread, v in sorted(self.variance[name].items()):
                out.append(("variance", f"{name}.{spread}", v))
        for spread, v in sorted(self.wasserstein.items()):
            out.append(("wasserstein", spread, v))
        for ch in CHANNELS:
            if ch in self.channel_wasserstein:
                out.append(("channel_wasserstein", ch, self.channel_wasserstein[ch]))
        if self.mean_channel_wasserstein is not None:
            out.append(("channel_wasserstein", "mean", self.mean_channel_wasserstein))
        return out


def evaluate(
    real: ConditionedDataset,
    generated: ConditionedDataset,
    fingerprint: Optional[str] = None,
) -> EvalReport:
    if real.kind != generated.kind:
        raise InvalidArgumentError(f"kind mismatch: {real.kind} vs {generated.kind}")
    report = EvalReport(real.kind, len(real), len(generated), fingerprint=fingerprint)
    if real.kind == POINTS2D:
        for name, ds in (("real", real), ("generated", generated)):
            report.variance[name] = {}
            report.class_variance[name] = {}
            for spread in (False, True):
                per_class = class_variances(ds, spread)
                if not per_class:
                    continue
                tag = f"spread{int(spread)}"
                report.variance[name][tag] = float(np.mean(list(per_class.values())))
                report.class_variance[name].update(
                    {f"{tag}.class{c}": v for c, v in per_class.items()}
                )
        for spread in (False, True):
            try:
                report.wasserstein[f"spread{int(spread)}"] = coordinate_wasserstein(real, generated, spread)
            except InvalidArgumentError:
                logger.warning("no shared classes at spread=%d", int(spread))
    elif real.kind == CALO:
        rc = extract_channels_batch(real.samples)
        gc = extract_channels_batch(generated.samples)
        report.zero_images = int((rc[:, 0] == 0).sum() + (gc[:, 0] == 0).sum())
        if report.zero_images:
            logger.warning("%d all-zero images; centroid set to grid center", report.zero_images)
        report.channel_wasserstein = channel_wasserstein(rc, gc)
        report.mean_channel_wasserstein = float(np.mean(list(report.channel_wasserstein.values())))
    return report


def metrics_table(report: EvalReport) -> str:
    """Tab-delimited ``section  key  value`` table."""
    lines = ["section\tkey\tvalue"]
    lines += [f"{s}\t{k}\t{v!r}" for s, k, v in report.rows()]
    if report.fingerprint:
        lines.append(f"meta\tfingerprint\t{report.fingerprint}")
    return "\n".join(lines) + "\n"
