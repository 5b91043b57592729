"""Sine position encodings for per-pixel ground depth and object queries.

Depth is encoded raw in meters (no normalization); the temperature
follows the usual transformer convention of 10000.  Cells whose ray
never reaches the ground carry an all-zero sentinel embedding.
"""

from __future__ import annotations

import numpy as np

from .camera_geometry import CameraRig, GroundPlane, RAY_PARALLEL_TOL
from .scene_cue_bank import STRIDE, grid_dims_for_image

DEFAULT_TEMPERATURE = 10000.0


def sine_encode(value: float, d_e: int, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Interleaved sin/cos encoding of a scalar: entry 2i is
    sin(value / temperature^(2i/d_e)), entry 2i+1 the matching cos."""
    if d_e <= 0 or d_e % 2:
        raise ValueError(f"embedding size must be a positive even integer, got {d_e}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    freq = temperature ** (2.0 * np.arange(d_e // 2) / d_e)
    ang = value / freq
    out = np.empty(d_e)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def embed_depth_map(
    rig: CameraRig,
    plane: GroundPlane,
    d_e: int,
    temperature: float = DEFAULT_TEMPERATURE,
) -> np.ndarray:
    """Per-cell sine embedding of the ground depth d(u, v) at 1/8 image
    resolution, evaluated at cell-center pixels.

    Returns an (H/8, W/8, d_e) array; cells above the horizon (ray
    parallel to the plane or intersecting behind the camera) are all
    zeros.
    """
    if d_e <= 0 or d_e % 2:
        raise ValueError(f"embedding size must be a positive even integer, got {d_e}")
    h_cells, w_cells = grid_dims_for_image(rig.image_height, rig.image_width)
    u = (np.arange(w_cells) + 0.5) * STRIDE
    v = (np.arange(h_cells) + 0.5) * STRIDE
    uu, vv = np.meshgrid(u, v)
    den = plane.a * (uu - rig.a_x) / rig.f_x + plane.b * (vv - rig.a_y) / rig.f_y + plane.c
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(np.abs(den) > RAY_PARALLEL_TOL, -plane.d / den, np.nan)
    valid = np.isfinite(depth) & (depth > 0)
    freq = temperature ** (2.0 * np.arange(d_e // 2) / d_e)
    ang = np.where(valid, depth, 0.0)[:, :, None] / freq
    out = np.empty((h_cells, w_cells, d_e))
    out[:, :, 0::2] = np.sin(ang)
    out[:, :, 1::2] = np.cos(ang)
    out[~valid] = 0.0
    return out


def embed_query(
    box2d: tuple[float, float, float, float],
    bottom_center: tuple[float, float],
    d_e: int = 64,
    temperature: float = DEFAULT_TEMPERATURE,
) -> np.ndarray:
    """Concatenated sine encodings of the six normalized query scalars
    (x1, y1, x2, y2, u_c, v_c); output length is 6 * d_e.

    Coordinates must already be normalized by the image dimensions; a
    small overshoot band [-0.1, 1.1] is tolerated for boxes touching the
    border.
    """
    coords = [*box2d, *bottom_center]
    for value in coords:
        if not -0.1 <= value <= 1.1:
            raise ValueError(
                f"query coordinate {value} is outside [-0.1, 1.1]; "
                "normalize by the image dimensions first"
            )
    return np.concatenate([sine_encode(v, d_e, temperature) for v in coords])
