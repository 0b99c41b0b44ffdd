"""BEV grid geometry: grid and height-layer specs, panorama/aerial projections, planar poses.

Coordinate conventions used throughout the package:

* BEV metric frame: camera ground position at the origin, +x = camera
  forward (north when yaw = 0), +y to the camera's right. Azimuth is
  measured from +x toward +y.
* Aerial images are north-up. ``Pose3DoF`` maps BEV metric coordinates
  into aerial pixel coordinates: rotate by yaw (counterclockwise
  positive), scale by 1/GSD, translate by ``t_px``.
* Equirectangular panoramas: u = 0 at azimuth -pi (configurable via
  ``azimuth_offset_rad``), a north-facing camera sees azimuth 0 at the
  image center; v runs from zenith (0) to nadir (H).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle_rad):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return -((-np.asarray(angle_rad) + np.pi) % TWO_PI - np.pi)


def rotation_matrix(yaw_rad: float) -> np.ndarray:
    """2x2 counterclockwise rotation matrix."""
    c, s = math.cos(yaw_rad), math.sin(yaw_rad)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class BevGridSpec:
    """Uniform square BEV grid centered on the camera ground position.

    The grid has ``n_points_per_side`` points spanning ``extent_m`` meters,
    so adjacent points are ``extent_m / (n - 1)`` apart. For the camera to
    sit exactly on a grid point, ``n_points_per_side`` should be odd; even
    counts are accepted for degenerate unit cases but camera-centered
    consumers (the synthetic harness, the CLI) reject them.
    """

    n_points_per_side: int = 41
    extent_m: float = 71.0

    def __post_init__(self):
        if self.n_points_per_side < 2:
            raise ValueError("grid needs at least 2 points per side")
        if not self.extent_m > 0:
            raise ValueError("grid extent must be positive")

    @property
    def spacing_m(self) -> float:
        return self.extent_m / (self.n_points_per_side - 1)

    @property
    def center_index(self) -> float:
        return (self.n_points_per_side - 1) / 2.0

    @property
    def num_cells(self) -> int:
        return self.n_points_per_side * self.n_points_per_side


@dataclass(frozen=True)
class HeightLayerSpec:
    """Evenly spaced height layers; layer i sits at z_min + i * spacing."""

    num_layers: int = 11
    z_min_m: float = -10.0
    z_max_m: float = 10.0

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("need at least 2 height layers")
        if not self.z_min_m < self.z_max_m:
            raise ValueError("z_min_m must be below z_max_m")

    @property
    def spacing_m(self) -> float:
        return (self.z_max_m - self.z_min_m) / (self.num_layers - 1)

    def layer_heights(self) -> np.ndarray:
        return self.z_min_m + np.arange(self.num_layers) * self.spacing_m

    def height_of(self, index):
        """Height in meters of a layer index (scalar or array)."""
        return self.z_min_m + np.asarray(index) * self.spacing_m

    def nearest_index(self, height_m):
        """Nearest layer index to a height, ties rounding toward the lower index."""
        frac = (np.asarray(height_m, dtype=float) - self.z_min_m) / self.spacing_m
        idx = np.ceil(frac - 0.5).astype(np.int64)
        return np.clip(idx, 0, self.num_layers - 1)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Equirectangular panorama geometry plus the camera mounting height."""

    panorama_width: int
    panorama_height: int
    camera_height_m: float = 2.5
    azimuth_offset_rad: float = 0.0

    def __post_init__(self):
        if self.panorama_width != 2 * self.panorama_height:
            raise ValueError("equirectangular panorama requires width == 2 * height")
        if not 2.0 <= self.camera_height_m <= 3.0:
            raise ValueError("camera height outside the supported 2-3 m range")


@dataclass(frozen=True)
class AerialMeta:
    """Aerial image scale: square image with a known ground sampling distance."""

    gsd_m_per_px: float = 0.12
    image_size_px: int = 640

    def __post_init__(self):
        if not self.gsd_m_per_px > 0:
            raise ValueError("gsd must be positive")
        if self.image_size_px < 1:
            raise ValueError("image size must be positive")


@dataclass(frozen=True, eq=False)
class Pose3DoF:
    """Planar rigid transform: 2D translation in aerial pixels plus yaw.

    Yaw is counterclockwise positive, 0 = north-aligned, and gets
    normalized to (-pi, pi] at construction.
    """

    t_px: np.ndarray
    yaw_rad: float

    def __post_init__(self):
        t = np.array(self.t_px, dtype=float).reshape(2)
        if not np.all(np.isfinite(t)) or not np.isfinite(self.yaw_rad):
            raise ValueError("pose must be finite")
        object.__setattr__(self, "t_px", t)
        object.__setattr__(self, "yaw_rad", float(wrap_angle(self.yaw_rad)))

    @property
    def yaw_deg(self) -> float:
        return math.degrees(self.yaw_rad)

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw_rad)

    def to_json_dict(self) -> dict:
        return {"tx_px": float(self.t_px[0]), "ty_px": float(self.t_px[1]),
                "yaw_rad": self.yaw_rad}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Pose3DoF":
        if "yaw_rad" in d:
            yaw = float(d["yaw_rad"])
        else:
            yaw = math.radians(float(d["yaw_deg"]))
        return cls(np.array([d["tx_px"], d["ty_px"]]), yaw)


@dataclass(frozen=True)
class SceneSpec:
    """Bundle of the four geometry specs describing one scene setup."""

    grid: BevGridSpec = BevGridSpec()
    layers: HeightLayerSpec = HeightLayerSpec()
    intrinsics: CameraIntrinsics = CameraIntrinsics(1024, 512)
    aerial: AerialMeta = AerialMeta()

    @property
    def grid_center_px(self) -> np.ndarray:
        """Pixel position of the aerial BEV grid center (image center)."""
        c = (self.aerial.image_size_px - 1) / 2.0
        return np.array([c, c])

    def identity_pose(self) -> Pose3DoF:
        """Pose mapping ground cell (i, j) onto aerial grid cell (i, j)."""
        return Pose3DoF(self.grid_center_px, 0.0)

    def to_json_dict(self) -> dict:
        return {
            "n": self.grid.n_points_per_side,
            "extent_m": self.grid.extent_m,
            "m_layers": self.layers.num_layers,
            "z_min": self.layers.z_min_m,
            "z_max": self.layers.z_max_m,
            "gsd": self.aerial.gsd_m_per_px,
            "image_size": self.aerial.image_size_px,
            "pano_w": self.intrinsics.panorama_width,
            "pano_h": self.intrinsics.panorama_height,
            "camera_height": self.intrinsics.camera_height_m,
            "azimuth_offset": self.intrinsics.azimuth_offset_rad,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            grid=BevGridSpec(int(d["n"]), float(d["extent_m"])),
            layers=HeightLayerSpec(int(d["m_layers"]), float(d["z_min"]), float(d["z_max"])),
            intrinsics=CameraIntrinsics(
                int(d["pano_w"]), int(d["pano_h"]),
                float(d.get("camera_height", 2.5)),
                float(d.get("azimuth_offset", 0.0)),
            ),
            aerial=AerialMeta(float(d["gsd"]), int(d.get("image_size", 640))),
        )


def bev_cell_to_metric(spec: BevGridSpec, ix, iy):
    """Camera-relative metric coordinates of grid cell (ix, iy); center cell -> (0, 0)."""
    ix_a = np.asarray(ix)
    iy_a = np.asarray(iy)
    n = spec.n_points_per_side
    if np.any(ix_a < 0) or np.any(ix_a >= n) or np.any(iy_a < 0) or np.any(iy_a >= n):
        raise IndexError(f"cell index outside [0, {n})")
    c = spec.center_index
    x = (ix_a - c) * spec.spacing_m
    y = (iy_a - c) * spec.spacing_m
    if np.ndim(ix) == 0 and np.ndim(iy) == 0:
        return float(x), float(y)
    return x, y


def cell_center_coords(spec: BevGridSpec) -> np.ndarray:
    """(N, N, 2) metric coordinates of every grid cell."""
    offsets = (np.arange(spec.n_points_per_side) - spec.center_index) * spec.spacing_m
    coords = np.empty((spec.n_points_per_side, spec.n_points_per_side, 2))
    coords[..., 0] = offsets[:, None]
    coords[..., 1] = offsets[None, :]
    return coords


def project_point_to_panorama(intr: CameraIntrinsics, x_m, y_m, z_m):
    """Project a camera-relative 3D point into panorama pixel coordinates.

    ``z_m`` is measured from ground level (the camera sits at
    ``camera_height_m``). Returns (u, v) or None when the elevation falls
    outside the image (exact nadir). Raises on the degenerate point at the
    optical center.
    """
    r = math.hypot(x_m, y_m)
    dz = z_m - intr.camera_height_m
    if r == 0.0 and dz == 0.0:
        raise ValueError("point coincides with the optical center")
    azimuth = math.atan2(y_m, x_m) - intr.azimuth_offset_rad
    elevation = math.atan2(dz, r)
    u = (azimuth / TWO_PI + 0.5) * intr.panorama_width % intr.panorama_width
    v = (0.5 - elevation / math.pi) * intr.panorama_height
    if not 0.0 <= v < intr.panorama_height:
        return None
    return u, v


def panorama_pixel_ray(intr: CameraIntrinsics, u, v):
    """Unit ray direction(s) (dx, dy, dz) through panorama pixel coordinates.

    Inverse of :func:`project_point_to_panorama`; accepts arrays.
    """
    azimuth = (np.asarray(u) / intr.panorama_width - 0.5) * TWO_PI + intr.azimuth_offset_rad
    elevation = (0.5 - np.asarray(v) / intr.panorama_height) * np.pi
    ce = np.cos(elevation)
    return ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)


def metric_to_aerial_px(meta: AerialMeta, pose: Pose3DoF, x_m, y_m):
    """Map BEV metric coordinates to aerial pixel coordinates under a pose."""
    c, s = math.cos(pose.yaw_rad), math.sin(pose.yaw_rad)
    x = np.asarray(x_m)
    y = np.asarray(y_m)
    xr = c * x - s * y
    yr = s * x + c * y
    xs = pose.t_px[0] + xr / meta.gsd_m_per_px
    ys = pose.t_px[1] + yr / meta.gsd_m_per_px
    if np.ndim(x_m) == 0 and np.ndim(y_m) == 0:
        return float(xs), float(ys)
    return xs, ys


def aerial_px_to_metric(meta: AerialMeta, pose: Pose3DoF, x_px, y_px):
    """Inverse of :func:`metric_to_aerial_px`."""
    c, s = math.cos(pose.yaw_rad), math.sin(pose.yaw_rad)
    dx = (np.asarray(x_px) - pose.t_px[0]) * meta.gsd_m_per_px
    dy = (np.asarray(y_px) - pose.t_px[1]) * meta.gsd_m_per_px
    x = c * dx + s * dy
    y = -s * dx + c * dy
    if np.ndim(x_px) == 0 and np.ndim(y_px) == 0:
        return float(x), float(y)
    return x, y


def aerial_bev_sample_coords(spec: BevGridSpec, meta: AerialMeta, center_px):
    """Axis-aligned N x N aerial sampling grid around ``center_px``.

    Returns (coords, in_bounds): coords has shape (N, N, 2) in pixels with
    spacing ``spacing_m / gsd``; in_bounds flags cells whose coordinates
    stay within [0, image_size - 1] on both axes.
    """
    center = np.asarray(center_px, dtype=float).reshape(2)
    size = meta.image_size_px
    if not (0 <= center[0] <= size - 1 and 0 <= center[1] <= size - 1):
        raise ValueError("grid center outside the aerial image")
    spacing_px = spec.spacing_m / meta.gsd_m_per_px
    offsets = (np.arange(spec.n_points_per_side) - spec.center_index) * spacing_px
    coords = np.empty((spec.n_points_per_side, spec.n_points_per_side, 2))
    coords[..., 0] = center[0] + offsets[:, None]
    coords[..., 1] = center[1] + offsets[None, :]
    in_bounds = np.all((coords >= 0.0) & (coords <= size - 1), axis=-1)
    return coords, in_bounds


def _nearest_cell(frac_idx: np.ndarray) -> np.ndarray:
    # round-half-up keeps the rule deterministic for points on cell borders
    return np.floor(frac_idx + 0.5).astype(np.int64)


def ground_cell_to_aerial_cell(specs: SceneSpec, pose: Pose3DoF, cells: np.ndarray):
    """Nearest aerial grid cell for each ground grid cell under ``pose``.

    ``cells`` is (K, 2) integer ground indices; returns (targets (K, 2),
    valid (K,)) where valid marks targets inside the aerial grid.
    """
    cells = np.asarray(cells)
    c = specs.grid.center_index
    g = (cells - c) * specs.grid.spacing_m
    ax, ay = metric_to_aerial_px(specs.aerial, pose, g[:, 0], g[:, 1])
    spacing_px = specs.grid.spacing_m / specs.aerial.gsd_m_per_px
    center = specs.grid_center_px
    fx = (ax - center[0]) / spacing_px + c
    fy = (ay - center[1]) / spacing_px + c
    tgt = np.stack([_nearest_cell(fx), _nearest_cell(fy)], axis=1)
    n = specs.grid.n_points_per_side
    valid = np.all((tgt >= 0) & (tgt < n), axis=1)
    return tgt, valid


def aerial_cell_to_ground_cell(specs: SceneSpec, pose: Pose3DoF, cells: np.ndarray):
    """Nearest ground grid cell for each aerial grid cell (inverse direction)."""
    cells = np.asarray(cells)
    c = specs.grid.center_index
    spacing_px = specs.grid.spacing_m / specs.aerial.gsd_m_per_px
    center = specs.grid_center_px
    ax = center[0] + (cells[:, 0] - c) * spacing_px
    ay = center[1] + (cells[:, 1] - c) * spacing_px
    gx, gy = aerial_px_to_metric(specs.aerial, pose, ax, ay)
    fx = gx / specs.grid.spacing_m + c
    fy = gy / specs.grid.spacing_m + c
    tgt = np.stack([_nearest_cell(fx), _nearest_cell(fy)], axis=1)
    n = specs.grid.n_points_per_side
    valid = np.all((tgt >= 0) & (tgt < n), axis=1)
    return tgt, valid
