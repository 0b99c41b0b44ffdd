"""Localization and matching metrics plus the ground-truth projection protocol.

Ground panorama pixels are back-projected along their rays using a depth
map, transformed by the true pose into aerial pixels, and filtered by a
range threshold: the surviving pixels define the valid region against
which predicted matches are scored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import AerialMeta, CameraIntrinsics, Pose3DoF, metric_to_aerial_px, panorama_pixel_ray
from .tensorio import load_tensor, save_tensor

PRED_CSV_FIELDS = ("xg", "yg", "xs", "ys")
DEFAULT_THRESHOLDS_PX = (5.0, 10.0, 15.0)
DEFAULT_MAX_RANGE_M = 30.0


@dataclass
class MatchPrediction:
    """Predicted pixel correspondences (ground panorama -> aerial image)."""

    grd_px: np.ndarray  # (K, 2) as (x, y)
    sat_px: np.ndarray  # (K, 2)

    def __post_init__(self):
        self.grd_px = np.asarray(self.grd_px, dtype=float).reshape(-1, 2)
        self.sat_px = np.asarray(self.sat_px, dtype=float).reshape(-1, 2)
        if self.grd_px.shape != self.sat_px.shape:
            raise ValueError("prediction arrays disagree in length")

    def __len__(self) -> int:
        return self.grd_px.shape[0]

    @classmethod
    def from_csv(cls, path) -> "MatchPrediction":
        grd, sat = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != PRED_CSV_FIELDS:
                raise ValueError(f"{path}: expected header {','.join(PRED_CSV_FIELDS)}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    grd.append((float(row["xg"]), float(row["yg"])))
                    sat.append((float(row["xs"]), float(row["ys"])))
                except (TypeError, ValueError, KeyError) as exc:
                    raise ValueError(f"{path}: malformed row at line {line_no}") from exc
        if not grd:
            raise ValueError(f"{path}: no prediction rows")
        return cls(np.array(grd), np.array(sat))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PRED_CSV_FIELDS)
            for g, s in zip(self.grd_px, self.sat_px):
                writer.writerow([repr(float(v)) for v in (g[0], g[1], s[0], s[1])])


@dataclass
class GroundTruthProjection:
    """Per ground-pixel aerial target and the valid-region mask.

    ``sat_xy`` is (H, W, 2) with NaN outside the valid region.
    """

    sat_xy: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.sat_xy = np.asarray(self.sat_xy, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.sat_xy.ndim != 3 or self.sat_xy.shape[2] != 2 \
                or self.valid.shape != self.sat_xy.shape[:2]:
            raise ValueError("projection map and mask shapes disagree")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        sat = np.where(self.valid[..., None], self.sat_xy, 0.0)
        save_tensor(directory / "gt_sat_x.cvt", sat[..., 0])
        save_tensor(directory / "gt_sat_y.cvt", sat[..., 1])
        save_tensor(directory / "gt_valid.cvt", self.valid.astype(np.float32))

    @classmethod
    def load(cls, directory) -> "GroundTruthProjection":
        directory = Path(directory)
        x = load_tensor(directory / "gt_sat_x.cvt").astype(float)
        y = load_tensor(directory / "gt_sat_y.cvt").astype(float)
        valid = load_tensor(directory / "gt_valid.cvt") > 0.5
        sat = np.stack([x, y], axis=-1)
        sat[~valid] = np.nan
        return cls(sat, valid)


def build_gt_projection(depth_grd: np.ndarray, intr: CameraIntrinsics, gt: Pose3DoF,
                        meta: AerialMeta, max_range_m: float = DEFAULT_MAX_RANGE_M,
                        planar_distance: bool = False) -> GroundTruthProjection:
    """Project every panorama pixel into the aerial image via its depth.

    ``depth_grd`` holds the range along each pixel ray in meters (NaN or
    non-positive = missing). A pixel is valid when its range threshold
    holds (3D range by default, horizontal distance with
    ``planar_distance``) and the projection lands inside the image, i.e.
    within [0, size - 1] on both axes.
    """
    depth = np.asarray(depth_grd, dtype=float)
    h, w = intr.panorama_height, intr.panorama_width
    if depth.shape != (h, w):
        raise ValueError(f"depth map shape {depth.shape} disagrees with intrinsics ({h}, {w})")

    vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dx, dy, _ = panorama_pixel_ray(intr, uu, vv)
    with np.errstate(invalid="ignore"):
        present = np.isfinite(depth) & (depth > 0)
        x = depth * dx
        y = depth * dy
        ranges = depth * np.hypot(dx, dy) if planar_distance else depth
        in_range = present & (ranges <= max_range_m)
        xs, ys = metric_to_aerial_px(meta, gt, x, y)
        size = meta.image_size_px
        in_image = (xs >= 0) & (xs <= size - 1) & (ys >= 0) & (ys <= size - 1)
    valid = present & in_range & in_image
    sat = np.stack([xs, ys], axis=-1)
    sat[~valid] = np.nan
    return GroundTruthProjection(sat, valid)


def matching_success_ratio(pred: MatchPrediction, gt: GroundTruthProjection,
                           thresholds_px=DEFAULT_THRESHOLDS_PX) -> dict:
    """Per-threshold success ratios plus the valid-prediction ratio.

    Every predicted pair counts in the denominator; a pair is correct at a
    threshold only when its ground pixel lies in the valid region and the
    predicted aerial point falls within the threshold of the true target.
    """
    if len(pred) == 0:
        raise ValueError("empty prediction set")
    thresholds = [float(t) for t in thresholds_px]
    if any(t <= 0 for t in thresholds):
        raise ValueError("thresholds must be positive")

    h, w = gt.valid.shape
    u = np.rint(pred.grd_px[:, 0]).astype(int)
    v = np.rint(pred.grd_px[:, 1]).astype(int)
    in_pano = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    valid = in_pano & gt.valid[vc, uc]

    target = gt.sat_xy[vc, uc]
    with np.errstate(invalid="ignore"):
        dist = np.hypot(pred.sat_px[:, 0] - target[:, 0], pred.sat_px[:, 1] - target[:, 1])
    total = len(pred)
    ratios = [float(np.count_nonzero(valid & (dist <= t)) / total) for t in thresholds]
    return {
        "thresholds_px": thresholds,
        "ratios": ratios,
        "valid_ratio": float(np.count_nonzero(valid) / total),
        "num_matches": total,
    }


def _median_low(values) -> float:
    ordered = sorted(values)
    return float(ordered[(len(ordered) - 1) // 2])


def localization_stats(errors) -> dict:
    """Mean and median of (translation m, orientation deg) error pairs.

    The median of an even-length list is the lower-middle element,
    computed per component.
    """
    errors = list(errors)
    if not errors:
        raise ValueError("no localization errors given")
    trans = [float(e[0]) for e in errors]
    orient = [float(e[1]) for e in errors]
    return {
        "mean_translation_m": float(np.mean(trans)),
        "median_translation_m": _median_low(trans),
        "mean_orientation_deg": float(np.mean(orient)),
        "median_orientation_deg": _median_low(orient),
        "count": len(errors),
    }
