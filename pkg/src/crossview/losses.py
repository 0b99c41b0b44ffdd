"""Training objectives: virtual-correspondence pose loss, symmetric InfoNCE
matching loss over the similarity matrix, and the height-consistency loss.

All sampling is driven by the seed in :class:`LossConfig`, so every loss is
bit-reproducible for a fixed configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (Pose3DoF, SceneSpec, aerial_cell_to_ground_cell,
                       ground_cell_to_aerial_cell)
from .refiner import SimilarityMatrix
from .surface import SurfaceMap


@dataclass(frozen=True)
class LossConfig:
    beta1: float = 1.0
    beta2: float = 1.0
    n_v: int = 100
    l_v_m: float = 5.0
    n_s: int = 1024
    k_norm: float = 100.0
    rng_seed: int = 0
    height_in_meters: bool = False

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.l_v_m, self.k_norm) <= 0:
            raise ValueError("loss weights and scales must be positive")
        if self.n_v < 1 or self.n_s < 1:
            raise ValueError("sample counts must be positive")

    def to_json_dict(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "n_v": self.n_v,
                "l_v_m": self.l_v_m, "n_s": self.n_s, "k_norm": self.k_norm,
                "rng_seed": self.rng_seed, "height_in_meters": self.height_in_meters}

    @classmethod
    def from_json_dict(cls, d: dict) -> "LossConfig":
        defaults = cls()
        return cls(
            beta1=float(d.get("beta1", defaults.beta1)),
            beta2=float(d.get("beta2", defaults.beta2)),
            n_v=int(d.get("n_v", defaults.n_v)),
            l_v_m=float(d.get("l_v_m", defaults.l_v_m)),
            n_s=int(d.get("n_s", defaults.n_s)),
            k_norm=float(d.get("k_norm", defaults.k_norm)),
            rng_seed=int(d.get("rng_seed", defaults.rng_seed)),
            height_in_meters=bool(d.get("height_in_meters", defaults.height_in_meters)),
        )


def vce_loss(pred: Pose3DoF, gt: Pose3DoF, cfg: LossConfig) -> float:
    """Mean displacement of random planar points under predicted vs true pose.

    Points are drawn uniformly from the centered l_v x l_v square; both
    poses must live in the same metric frame.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    half = cfg.l_v_m / 2.0
    pts = rng.uniform(-half, half, size=(cfg.n_v, 2))
    moved_pred = pts @ pred.rotation().T + pred.t_px
    moved_gt = pts @ gt.rotation().T + gt.t_px
    diff = moved_pred - moved_gt
    return float(np.mean(np.hypot(diff[:, 0], diff[:, 1])))


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _flat(cells: np.ndarray, n: int) -> np.ndarray:
    return cells[:, 0] * n + cells[:, 1]


def _sample_pairs(specs: SceneSpec, gt: Pose3DoF, n_s: int,
                  rng: np.random.Generator, reverse: bool):
    """Sampled (source flat idx, target flat idx) pairs valid under the pose.

    Out-of-grid projections are dropped before sampling; when fewer than
    ``n_s`` valid pairs exist all of them are used.
    """
    n = specs.grid.n_points_per_side
    grid = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"),
                    axis=-1).reshape(-1, 2)
    if reverse:
        tgt, valid = aerial_cell_to_ground_cell(specs, gt, grid)
    else:
        tgt, valid = ground_cell_to_aerial_cell(specs, gt, grid)
    src = grid[valid]
    tgt = tgt[valid]
    if len(src) == 0:
        raise ValueError("no valid patch pairs: grids are disjoint under the pose")
    if len(src) > n_s:
        pick = rng.choice(len(src), size=n_s, replace=False)
        src, tgt = src[pick], tgt[pick]
    return _flat(src, n), _flat(tgt, n)


def matching_loss(s_orig: SimilarityMatrix, gt: Pose3DoF, specs: SceneSpec,
                  cfg: LossConfig) -> float:
    """Average of the two symmetric InfoNCE directions over sampled patch pairs.

    Targets are the nearest-cell projections of each sampled patch under
    the true pose: row-wise cross-entropy for ground -> aerial, column-wise
    for aerial -> ground.
    """
    n = specs.grid.n_points_per_side
    if s_orig.num_patches != n * n:
        raise ValueError("similarity matrix size disagrees with the grid spec")
    rng = np.random.default_rng(cfg.rng_seed)
    s = s_orig.s

    g_src, g_tgt = _sample_pairs(specs, gt, cfg.n_s, rng, reverse=False)
    lse_rows = _logsumexp(s, axis=1)
    loss_g2s = float(np.mean(lse_rows[g_src] - s[g_src, g_tgt]))

    a_src, a_tgt = _sample_pairs(specs, gt, cfg.n_s, rng, reverse=True)
    lse_cols = _logsumexp(s, axis=0)
    loss_s2g = float(np.mean(lse_cols[a_src] - s[a_tgt, a_src]))

    return 0.5 * (loss_g2s + loss_s2g)


def height_loss(surf_grd: SurfaceMap, surf_sat: SurfaceMap, gt: Pose3DoF,
                specs: SceneSpec, cfg: LossConfig) -> float:
    """Mean normalized L1 gap between ground and aerial surface estimates.

    Pairs follow the same ground -> aerial sampling as the matching loss.
    Heights compare in layer-index units by default (``height_in_meters``
    switches to meters) and are scaled by 1/k_norm.
    """
    n = specs.grid.n_points_per_side
    if surf_grd.index.shape != (n, n) or surf_sat.index.shape != (n, n):
        raise ValueError("surface maps disagree with the grid spec")
    rng = np.random.default_rng(cfg.rng_seed)
    g_src, g_tgt = _sample_pairs(specs, gt, cfg.n_s, rng, reverse=False)
    if cfg.height_in_meters:
        a = surf_grd.height_m.reshape(-1)[g_src]
        b = surf_sat.height_m.reshape(-1)[g_tgt]
    else:
        a = surf_grd.index.reshape(-1)[g_src].astype(float)
        b = surf_sat.index.reshape(-1)[g_tgt].astype(float)
    return float(np.mean(np.abs(a - b)) / cfg.k_norm)


def total_loss(vce: float, matching: float, height: float, cfg: LossConfig) -> float:
    """Weighted sum of the three parts."""
    for part in (vce, matching, height):
        if not np.isfinite(part):
            raise ValueError("loss parts must be finite")
    return float(vce + cfg.beta1 * matching + cfg.beta2 * height)


def loss_report(vce: float, matching: float, height: float, cfg: LossConfig) -> dict:
    """JSON-ready record of the loss values and the seed that produced them."""
    return {
        "vce": vce,
        "matching": matching,
        "height": height,
        "total": total_loss(vce, matching, height, cfg),
        "seed": cfg.rng_seed,
    }
