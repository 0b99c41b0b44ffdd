import logging

import pytest

from crossview.geometry import (AerialMeta, BevGridSpec, CameraIntrinsics,
                                HeightLayerSpec, SceneSpec)

logging.getLogger("crossview").setLevel(logging.ERROR)


@pytest.fixture
def default_specs() -> SceneSpec:
    return SceneSpec()


@pytest.fixture
def small_specs() -> SceneSpec:
    """9x9 grid for fast synthetic scenes."""
    return SceneSpec(
        grid=BevGridSpec(n_points_per_side=9, extent_m=16.0),
        layers=HeightLayerSpec(),
        intrinsics=CameraIntrinsics(256, 128),
        aerial=AerialMeta(gsd_m_per_px=0.12, image_size_px=400),
    )


@pytest.fixture
def mid_specs() -> SceneSpec:
    """21x21 grid for statistical checks."""
    return SceneSpec(
        grid=BevGridSpec(n_points_per_side=21, extent_m=40.0),
        layers=HeightLayerSpec(),
        intrinsics=CameraIntrinsics(512, 256),
        aerial=AerialMeta(gsd_m_per_px=0.12, image_size_px=512),
    )
