"""Reference suggestion and camera view alignment."""

from ._viewalign import (
    CameraIntrinsics,
    CameraPose,
    GalleryEntry,
    GalleryIndex,
    ViewAlignError,
    crop_captured,
    embed_text,
    estimate_pose,
    fit_reference,
    load_manifest,
    magsac_weight,
    project,
    run_sweep,
    scene_profiles,
    should_terminate,
    simulate_alignment,
    solve_epnp,
)

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "GalleryEntry",
    "GalleryIndex",
    "ViewAlignError",
    "crop_captured",
    "embed_text",
    "estimate_pose",
    "fit_reference",
    "load_manifest",
    "magsac_weight",
    "project",
    "run_sweep",
    "scene_profiles",
    "should_terminate",
    "simulate_alignment",
    "solve_epnp",
]
