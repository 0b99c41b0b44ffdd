"""Synthetic worlds with known height fields, textures, and poses.

Every pipeline stage gets a ground-truth oracle: the rendered ground
feature volume carries the texture at the true surface layer, confidence
logits peak there, and the aerial map is the texture resampled under the
true pose. Height fields span exactly [ground level, top layer] so the
aerial pseudo-depth is invertible back to surface indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose3DoF, SceneSpec, aerial_px_to_metric
from .surface import BevFeatureMap, FeatureVolume, SurfaceMap
from .tensorio import load_tensor, save_tensor

GROUND_LEVEL_M = -3.0      # scene ground level relative to the camera origin
DEPTH_SCALE = 1.0          # rendered aerial depth is meters above ground level
CONFIDENCE_PEAK = 15.0
SCENE_MANIFEST = "manifest.json"
_SCENE_FORMAT = "scene-v1"

_TENSOR_NAMES = ("height_field", "texture", "volume", "conf_logits",
                 "f_sat", "surf_gt_index", "depth_sat")


@dataclass
class SyntheticScene:
    """World state: per-cell surface heights, per-cell features, and the true pose."""

    height_field_m: np.ndarray   # (N, N)
    feature_texture: np.ndarray  # (N, N, c), unit-norm rows
    gt_pose: Pose3DoF
    noise_sigma: float
    seed: int


@dataclass
class RenderedInputs:
    """Pipeline inputs consistent with one scene."""

    volume: FeatureVolume
    conf_logits: np.ndarray   # (M, N, N)
    f_sat: BevFeatureMap
    surf_gt: SurfaceMap       # ground-frame surface
    depth_sat: np.ndarray     # (N, N) aerial pseudo-depth


@dataclass
class SceneBundle:
    specs: SceneSpec
    scene: SyntheticScene
    inputs: RenderedInputs
    depth_anchor_m: float = GROUND_LEVEL_M
    depth_scale: float = DEPTH_SCALE


def _require_camera_centered(specs: SceneSpec) -> None:
    if specs.grid.n_points_per_side % 2 == 0:
        raise ValueError("synthetic scenes need an odd grid so the camera sits on a point")


def generate_scene(specs: SceneSpec, seed: int, noise_sigma: float = 0.0,
                   snapped: bool = True, channels: int = 16,
                   num_bumps: int = 8) -> SyntheticScene:
    """Random smooth height field, unit-norm features, and a pose near the grid center.

    Heights are a sum of Gaussian bumps on a flat ground plane, rescaled to
    span exactly [ground level, top layer]. Snapped poses translate by
    whole cells and rotate by quarter turns, which makes nearest-cell
    resampling exact; ``snapped=False`` draws a continuous pose instead.
    """
    _require_camera_centered(specs)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng([seed, 0])
    n = specs.grid.n_points_per_side

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    bumps = np.zeros((n, n))
    for _ in range(num_bumps):
        cx, cy = rng.uniform(0, n - 1, size=2)
        amp = rng.uniform(1.0, 10.0)
        width = rng.uniform(1.5, max(2.0, n / 6.0))
        bumps += amp * np.exp(-((ii - cx) ** 2 + (jj - cy) ** 2) / (2.0 * width ** 2))
    bumps -= bumps.min()
    peak = bumps.max()
    span = specs.layers.z_max_m - GROUND_LEVEL_M
    if peak > 0:
        bumps *= span / peak
    height = GROUND_LEVEL_M + bumps
    height = np.clip(height, specs.layers.z_min_m, specs.layers.z_max_m)

    texture = rng.standard_normal((n, n, channels))
    texture /= np.linalg.norm(texture, axis=2, keepdims=True)

    center = specs.grid_center_px
    spacing_px = specs.grid.spacing_m / specs.aerial.gsd_m_per_px
    max_cells = n // 4
    if snapped:
        offset_cells = rng.integers(-max_cells, max_cells + 1, size=2)
        yaw = rng.integers(0, 4) * (np.pi / 2.0)
        t_px = center + offset_cells * spacing_px
    else:
        t_px = center + rng.uniform(-max_cells, max_cells, size=2) * spacing_px
        yaw = rng.uniform(-np.pi, np.pi)
    return SyntheticScene(height, texture, Pose3DoF(t_px, float(yaw)),
                          float(noise_sigma), int(seed))


_QUARTER_INVERSE = {
    0: lambda x, y: (x, y),
    1: lambda x, y: (y, -x),    # inverse of a +90 deg turn
    2: lambda x, y: (-x, -y),
    3: lambda x, y: (-y, x),
}


def _snapped_cell_transform(scene: SyntheticScene, specs: SceneSpec):
    """(offset cells, quarter turns) when the pose is grid-snapped, else None."""
    spacing_px = specs.grid.spacing_m / specs.aerial.gsd_m_per_px
    k = (scene.gt_pose.t_px - specs.grid_center_px) / spacing_px
    turns = scene.gt_pose.yaw_rad / (np.pi / 2.0)
    if np.max(np.abs(k - np.rint(k))) < 1e-6 and abs(turns - np.rint(turns)) < 1e-6:
        return np.rint(k).astype(int), int(np.rint(turns)) % 4
    return None


def _bilinear(img: np.ndarray, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional cell coordinates (caller clamps to range)."""
    n = img.shape[0]
    x0 = np.clip(np.floor(fx).astype(int), 0, n - 2)
    y0 = np.clip(np.floor(fy).astype(int), 0, n - 2)
    ax = (fx - x0)[..., None] if img.ndim == 3 else fx - x0
    ay = (fy - y0)[..., None] if img.ndim == 3 else fy - y0
    v00 = img[x0, y0]
    v10 = img[x0 + 1, y0]
    v01 = img[x0, y0 + 1]
    v11 = img[x0 + 1, y0 + 1]
    return (v00 * (1 - ax) * (1 - ay) + v10 * ax * (1 - ay)
            + v01 * (1 - ax) * ay + v11 * ax * ay)


def _resample_to_aerial(scene: SyntheticScene, specs: SceneSpec):
    """Ground texture and heights seen from the aerial grid under the true pose."""
    n = specs.grid.n_points_per_side
    snap = _snapped_cell_transform(scene, specs)
    if snap is not None:
        k, turns = snap
        c = (n - 1) // 2
        ai, aj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        wx = ai - c - k[0]
        wy = aj - c - k[1]
        gx_rel, gy_rel = _QUARTER_INVERSE[turns](wx, wy)
        gx = gx_rel + c
        gy = gy_rel + c
        inside = (gx >= 0) & (gx < n) & (gy >= 0) & (gy < n)
        sx = np.clip(gx, 0, n - 1)
        sy = np.clip(gy, 0, n - 1)
        tex = scene.feature_texture[sx, sy]
        hgt = scene.height_field_m[sx, sy]
    else:
        c = specs.grid.center_index
        spacing_px = specs.grid.spacing_m / specs.aerial.gsd_m_per_px
        offs = (np.arange(n) - c) * spacing_px
        ax = specs.grid_center_px[0] + offs[:, None] + np.zeros((n, n))
        ay = specs.grid_center_px[1] + offs[None, :] + np.zeros((n, n))
        gxm, gym = aerial_px_to_metric(specs.aerial, scene.gt_pose, ax, ay)
        fx = gxm / specs.grid.spacing_m + c
        fy = gym / specs.grid.spacing_m + c
        inside = (fx >= 0) & (fx <= n - 1) & (fy >= 0) & (fy <= n - 1)
        tex = _bilinear(scene.feature_texture, fx, fy)
        hgt = _bilinear(scene.height_field_m, fx, fy)
    return tex, hgt, inside


def render_inputs(scene: SyntheticScene, specs: SceneSpec) -> RenderedInputs:
    """Render pipeline inputs consistent with the scene.

    With ``noise_sigma = 0``: non-surface volume layers are zero, the
    confidence logits are an exact one-hot peak, aerial features equal the
    transformed texture, and the aerial pseudo-depth inverts back to the
    aerial-frame surface indices.
    """
    _require_camera_centered(specs)
    rng = np.random.default_rng([scene.seed, 1])
    n = specs.grid.n_points_per_side
    m = specs.layers.num_layers
    c = scene.feature_texture.shape[2]
    sigma = scene.noise_sigma

    gt_index = specs.layers.nearest_index(scene.height_field_m)

    vol = sigma * rng.standard_normal((m, n, n, c))
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    vol[gt_index, ii, jj] = scene.feature_texture
    volume = FeatureVolume(vol, specs.layers, specs.grid)

    conf_logits = sigma * rng.standard_normal((m, n, n))
    conf_logits[gt_index, ii, jj] += CONFIDENCE_PEAK

    filler = rng.standard_normal((n, n, c))
    filler /= np.linalg.norm(filler, axis=2, keepdims=True)
    sat_noise = rng.standard_normal((n, n, c))
    depth_noise = rng.standard_normal((n, n))

    tex, hgt, inside = _resample_to_aerial(scene, specs)
    f_sat = np.where(inside[..., None], tex, filler) + sigma * sat_noise
    height_sat = np.where(inside, hgt, GROUND_LEVEL_M)
    depth_sat = (height_sat - GROUND_LEVEL_M) / DEPTH_SCALE + sigma * depth_noise

    return RenderedInputs(
        volume=volume,
        conf_logits=conf_logits,
        f_sat=BevFeatureMap(f_sat, specs.grid),
        surf_gt=SurfaceMap.from_index(gt_index, specs.layers),
        depth_sat=depth_sat,
    )


def aerial_gt_surface(scene: SyntheticScene, specs: SceneSpec) -> SurfaceMap:
    """True aerial-frame surface map (the transformed height field, discretized)."""
    _, hgt, inside = _resample_to_aerial(scene, specs)
    height_sat = np.where(inside, hgt, GROUND_LEVEL_M)
    return SurfaceMap.from_index(specs.layers.nearest_index(height_sat), specs.layers)


def save_scene_dir(directory, bundle: SceneBundle) -> None:
    """Write a scene directory: one manifest plus the named tensors."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inputs = bundle.inputs
    tensors = {
        "height_field": bundle.scene.height_field_m,
        "texture": bundle.scene.feature_texture,
        "volume": inputs.volume.data,
        "conf_logits": inputs.conf_logits,
        "f_sat": inputs.f_sat.data,
        "surf_gt_index": inputs.surf_gt.index.astype(np.float32),
        "depth_sat": inputs.depth_sat,
    }
    for name in _TENSOR_NAMES:
        save_tensor(directory / f"{name}.cvt", tensors[name])
    manifest = {
        "format": _SCENE_FORMAT,
        "spec": bundle.specs.to_json_dict(),
        "gt_pose": bundle.scene.gt_pose.to_json_dict(),
        "seed": bundle.scene.seed,
        "noise_sigma": bundle.scene.noise_sigma,
        "depth_anchor_m": bundle.depth_anchor_m,
        "depth_scale": bundle.depth_scale,
        "channels": bundle.scene.feature_texture.shape[2],
        "tensors": {name: list(np.asarray(tensors[name]).shape) for name in _TENSOR_NAMES},
    }
    with open(directory / SCENE_MANIFEST, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_scene_dir(directory) -> SceneBundle:
    directory = Path(directory)
    with open(directory / SCENE_MANIFEST) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _SCENE_FORMAT:
        raise ValueError(f"{directory}: unknown scene format")
    specs = SceneSpec.from_json_dict(manifest["spec"])
    tensors = {}
    for name in _TENSOR_NAMES:
        arr = load_tensor(directory / f"{name}.cvt").astype(float)
        if list(arr.shape) != manifest["tensors"][name]:
            raise ValueError(f"{name}: tensor shape disagrees with the manifest")
        tensors[name] = arr
    scene = SyntheticScene(
        height_field_m=tensors["height_field"],
        feature_texture=tensors["texture"],
        gt_pose=Pose3DoF.from_json_dict(manifest["gt_pose"]),
        noise_sigma=float(manifest["noise_sigma"]),
        seed=int(manifest["seed"]),
    )
    inputs = RenderedInputs(
        volume=FeatureVolume(tensors["volume"], specs.layers, specs.grid),
        conf_logits=tensors["conf_logits"],
        f_sat=BevFeatureMap(tensors["f_sat"], specs.grid),
        surf_gt=SurfaceMap.from_index(tensors["surf_gt_index"].astype(np.int64), specs.layers),
        depth_sat=tensors["depth_sat"],
    )
    return SceneBundle(specs=specs, scene=scene, inputs=inputs,
                       depth_anchor_m=float(manifest["depth_anchor_m"]),
                       depth_scale=float(manifest["depth_scale"]))


def make_scene_bundle(specs: SceneSpec, seed: int, noise_sigma: float = 0.0,
                      snapped: bool = True, channels: int = 16) -> SceneBundle:
    scene = generate_scene(specs, seed, noise_sigma, snapped=snapped, channels=channels)
    return SceneBundle(specs=specs, scene=scene, inputs=render_inputs(scene, specs))
