"""Per-scene feature memory at 1/8 image resolution.

Cues are extracted from a feature grid through a 0-1 mask activating the
3x3 neighborhood of each reference point, then folded into a per-scene
buffer: a convex momentum update for training streams, or a per-pixel
counted running mean for inference streams.

Banks serialize to a little-endian binary container:

    magic b"RLSB" | u32 version=1 | u32 n_scenes | u32 height_cells |
    u32 width_cells | u32 channels, then per scene:
    u32 id_len | id utf-8 | u64 frames_seen |
    f64 values (row-major, height*width*channels) |
    i64 counters (row-major, height*width)

All scenes in one container share the grid shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

STRIDE = 8

_MAGIC = b"RLSB"
_VERSION = 1


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Dense (height_cells, width_cells, channels) float grid."""

    values: np.ndarray

    def __eq__(self, other):
        return isinstance(other, FeatureGrid) and np.array_equal(self.values, other.values)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 3:
            raise ValueError(f"feature grid must be 3-dimensional, got {vals.ndim}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature grid contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height_cells(self) -> int:
        return self.values.shape[0]

    @property
    def width_cells(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def zeros(cls, height_cells: int, width_cells: int, channels: int) -> "FeatureGrid":
        return cls(np.zeros((height_cells, width_cells, channels)))

    @classmethod
    def for_image(cls, image_height: int, image_width: int, channels: int) -> "FeatureGrid":
        """Zero grid at 1/8 of the image resolution; dims must divide by 8."""
        h, w = grid_dims_for_image(image_height, image_width)
        return cls.zeros(h, w, channels)


@dataclass(frozen=True, eq=False)
class CueMask:
    """0-1 grid marking cells near reference points.  ``skipped`` counts
    points that fell outside the image and were ignored."""

    cells: np.ndarray
    skipped: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, CueMask)
            and self.skipped == other.skipped
            and np.array_equal(self.cells, other.cells)
        )

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ValueError("mask must be 2-dimensional")
        if not np.all((cells == 0) | (cells == 1)):
            raise ValueError("mask entries must be 0 or 1")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def ones(self) -> int:
        return int(self.cells.sum())


def grid_dims_for_image(image_height: int, image_width: int) -> tuple[int, int]:
    if image_height % STRIDE or image_width % STRIDE:
        raise ValueError(
            f"image dimensions must be divisible by {STRIDE}, "
            f"got {image_height}x{image_width}"
        )
    return image_height // STRIDE, image_width // STRIDE


def bank_memory_elements(image_height: int, image_width: int, channels: int) -> int:
    """Element count of one scene's buffer: (H/8) * (W/8) * channels."""
    h, w = grid_dims_for_image(image_height, image_width)
    return h * w * channels


def make_mask(points, grid_dims: tuple[int, int]) -> CueMask:
    """Activate the 3x3 cell neighborhood around each pixel reference
    point, clipped at grid borders.

    ``points`` are (u, v) pixel coordinates; each maps to feature cell
    (floor(v/8), floor(u/8)).  Out-of-image points are skipped and
    counted in the returned ``skipped`` field.
    """
    h_cells, w_cells = grid_dims
    cells = np.zeros((h_cells, w_cells), dtype=np.uint8)
    skipped = 0
    for u, v in points:
        if not (0 <= u < w_cells * STRIDE and 0 <= v < h_cells * STRIDE):
            skipped += 1
            continue
        col = int(u // STRIDE)
        row = int(v // STRIDE)
        cells[max(0, row - 1) : row + 2, max(0, col - 1) : col + 2] = 1
    return CueMask(cells, skipped=skipped)


def extract_cues(features: FeatureGrid, mask: CueMask) -> FeatureGrid:
    """Elementwise product of features with the mask; off-mask cells are
    exactly zero."""
    if mask.cells.shape != features.values.shape[:2]:
        raise ValueError(
            f"mask shape {mask.cells.shape} does not match grid "
            f"{features.values.shape[:2]}"
        )
    return FeatureGrid(features.values * mask.cells[:, :, None])


def fuse_for_decoder(current: FeatureGrid, memorized: FeatureGrid) -> FeatureGrid:
    """Channel-wise concatenation, current frame first."""
    if current.values.shape[:2] != memorized.values.shape[:2]:
        raise ValueError("spatial dimensions do not match")
    return FeatureGrid(np.concatenate([current.values, memorized.values], axis=2))


@dataclass
class _SceneSlot:
    memorized: np.ndarray
    counter: np.ndarray
    frames_seen: int = 0


class SceneBank:
    """Map from scene id to memorized cue grid, per-pixel observation
    counters, and a frame count.

    Mutation requires exclusive access per scene; distinct scenes are
    independent.
    """

    def __init__(self):
        self._scenes: dict[str, _SceneSlot] = {}

    def scene_ids(self) -> list[str]:
        return list(self._scenes)

    def has_scene(self, scene_id: str) -> bool:
        return scene_id in self._scenes

    def memorized(self, scene_id: str) -> FeatureGrid:
        return FeatureGrid(self._scenes[scene_id].memorized)

    def counter(self, scene_id: str) -> np.ndarray:
        return self._scenes[scene_id].counter.copy()

    def frames_seen(self, scene_id: str) -> int:
        return self._scenes[scene_id].frames_seen

    def reset_scene(self, scene_id: str, init: FeatureGrid) -> None:
        """Replace the scene's memory with ``init``; counters become the
        indicator of init's per-pixel nonzero support; frame count 0."""
        self._scenes[scene_id] = _SceneSlot(
            memorized=np.array(init.values),
            counter=np.any(init.values != 0, axis=2).astype(np.int64),
            frames_seen=0,
        )

    def _slot_for_update(self, scene_id: str, cues: FeatureGrid) -> _SceneSlot:
        slot = self._scenes.get(scene_id)
        if slot is not None:
            if slot.memorized.shape != cues.values.shape:
                raise ValueError(
                    f"cue shape {cues.values.shape} does not match bank "
                    f"{slot.memorized.shape} for scene {scene_id!r}"
                )
        return slot

    def update_momentum(
        self,
        scene_id: str,
        cues: FeatureGrid,
        momentum: float = 0.1,
        mask: CueMask | None = None,
    ) -> None:
        """Training-mode update: memory <- (1-momentum)*memory + momentum*cues.

        Applied at every cell by default (cues are zero off-mask anyway);
        pass ``mask`` to restrict the blend to masked cells.  The first
        update of an unknown scene initializes the memory to that
        frame's cues.
        """
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
        slot = self._slot_for_update(scene_id, cues)
        if slot is None:
            self.reset_scene(scene_id, cues)
            self._scenes[scene_id].frames_seen = 1
            return
        if mask is None:
            slot.memorized = (1.0 - momentum) * slot.memorized + momentum * cues.values
        else:
            if mask.cells.shape != slot.memorized.shape[:2]:
                raise ValueError("mask shape does not match bank grid")
            sel = mask.cells.astype(bool)
            slot.memorized[sel] = (
                (1.0 - momentum) * slot.memorized[sel] + momentum * cues.values[sel]
            )
        slot.frames_seen += 1

    def update_running_average(
        self, scene_id: str, cues: FeatureGrid, mask: CueMask
    ) -> None:
        """Inference-mode update: at each masked cell, bump its counter N
        and fold the cue in as a running mean
        ((N-1)/N)*memory + cue/N.  Off-mask cells and counters are
        untouched.  Unknown scenes start from zero memory and counters.
        """
        if mask.cells.shape != cues.values.shape[:2]:
            raise ValueError("mask shape does not match cue grid")
        slot = self._slot_for_update(scene_id, cues)
        if slot is None:
            slot = _SceneSlot(
                memorized=np.zeros_like(cues.values),
                counter=np.zeros(cues.values.shape[:2], dtype=np.int64),
            )
            self._scenes[scene_id] = slot
        sel = mask.cells.astype(bool)
        slot.counter[sel] += 1
        n = slot.counter[sel].astype(float)[:, None]
        slot.memorized[sel] = ((n - 1.0) / n) * slot.memorized[sel] + cues.values[sel] / n
        slot.frames_seen += 1


def save_bank(bank: SceneBank, path) -> None:
    """Write the bank in the binary container documented at module top."""
    ids = sorted(bank.scene_ids())
    shapes = {bank.memorized(sid).values.shape for sid in ids}
    if len(shapes) > 1:
        raise ValueError(f"scenes have mixed grid shapes: {sorted(shapes)}")
    shape = shapes.pop() if shapes else (0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, len(ids), *shape))
        for sid in ids:
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", bank.frames_seen(sid)))
            fh.write(np.ascontiguousarray(bank.memorized(sid).values, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bank.counter(sid), dtype="<i8").tobytes())


def load_bank(path) -> SceneBank:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a scene bank file (bad magic)")
        version, n_scenes, h, w, d = struct.unpack("<5I", fh.read(20))
        if version != _VERSION:
            raise ValueError(f"unsupported bank version {version}")
        bank = SceneBank()
        for _ in range(n_scenes):
            (id_len,) = struct.unpack("<I", fh.read(4))
            sid = fh.read(id_len).decode("utf-8")
            (frames_seen,) = struct.unpack("<Q", fh.read(8))
            values = np.frombuffer(fh.read(8 * h * w * d), dtype="<f8").reshape(h, w, d)
            counter = np.frombuffer(fh.read(8 * h * w), dtype="<i8").reshape(h, w)
            bank._scenes[sid] = _SceneSlot(
                memorized=values.astype(float),
                counter=counter.astype(np.int64),
                frames_seen=frames_seen,
            )
    return bank
