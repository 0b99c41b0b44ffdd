"""End-to-end localization: surface fusion, similarity, refinement, matching, pose."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Pose3DoF, SceneSpec
from .refiner import (RefinerParams, dustbin_extend, extract_matches,
                      initial_similarity, normalize_doubly_stochastic, refine)
from .solver import (CorrespondenceSet, solve_translation_only,
                     solve_weighted_procrustes)
from .surface import (BevFeatureMap, FeatureVolume, SurfaceMap,
                      fuse_height_features, normalize_confidence,
                      surface_from_accumulation)

log = logging.getLogger("crossview")


@dataclass(frozen=True)
class PipelineConfig:
    surface_threshold: float = 0.5
    tau: float = 0.1
    top_k: int = 30
    fuse_window: int | None = None   # None = fuse over all layers
    known_yaw_rad: float | None = None


@dataclass
class PipelineResult:
    pose_px: Pose3DoF
    degenerate: bool
    num_matches: int
    surface: SurfaceMap
    matches_m: CorrespondenceSet


def matches_cells_to_metric(matches: CorrespondenceSet, specs: SceneSpec) -> CorrespondenceSet:
    """Convert cell-unit matches to metric frames shared by the pose solver.

    Ground cells land in the camera metric frame; aerial cells become
    aerial pixel coordinates scaled by the GSD, so the recovered
    translation divided by the GSD is the pose translation in pixels.
    """
    c = specs.grid.center_index
    s_m = specs.grid.spacing_m
    spacing_px = s_m / specs.aerial.gsd_m_per_px
    ground = (matches.ground_xy - c) * s_m
    aerial_px = specs.grid_center_px + (matches.aerial_xy - c) * spacing_px
    return CorrespondenceSet(ground, aerial_px * specs.aerial.gsd_m_per_px, matches.weights)


def run_localization(volume: FeatureVolume, conf_logits: np.ndarray, f_sat: BevFeatureMap,
                     specs: SceneSpec, params: RefinerParams | None = None,
                     config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Surface model -> similarity -> refine -> normalize -> match -> pose."""
    conf = normalize_confidence(conf_logits)
    surf = surface_from_accumulation(conf, config.surface_threshold, specs.layers)
    f_grd = fuse_height_features(volume, conf, surf, window=config.fuse_window)
    sim = initial_similarity(f_grd, f_sat, config.tau)
    if params is not None:
        sim = refine(sim, params)
    else:
        log.warning("no refiner parameters given: skipping refinement (identity)")
    probs = normalize_doubly_stochastic(dustbin_extend(sim, params))
    matches = extract_matches(probs, config.top_k)
    matches_m = matches_cells_to_metric(matches, specs)

    gsd = specs.aerial.gsd_m_per_px
    if config.known_yaw_rad is not None:
        pose_m = solve_translation_only(matches_m, config.known_yaw_rad)
        degenerate = False
    else:
        pose_m, degenerate = solve_weighted_procrustes(matches_m)
    pose_px = Pose3DoF(pose_m.t_px / gsd, pose_m.yaw_rad)
    return PipelineResult(pose_px, degenerate, len(matches_m), surf, matches_m)
