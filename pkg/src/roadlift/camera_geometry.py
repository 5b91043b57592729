"""Camera rigs, virtual ground planes, and height-based 2D-to-3D lifting.

COORDINATE CONVENTIONS (shared by the whole package)
====================================================
Ground frame (right-handed):
  - z axis points up; the virtual ground plane is z = 0.
  - Box yaw is measured counter-clockwise about +z, starting from +x.
  - Box positions (x, y, z) are BOTTOM-FACE centers, not cuboid centers.

Camera frame (right-handed, computer-vision convention):
  - x right, y down, z forward along the optical axis.
  - The extrinsic transform maps ground-frame points into the camera
    frame: X_cam = R @ X_ground + t.

Image frame:
  - u right, v down, origin at the top-left corner, units in pixels.
  - Pinhole projection: u = f_x * x/z + a_x, v = f_y * y/z + a_y.

Virtual ground plane, expressed in camera coordinates:
  - Stored as (A, B, C, D) with (A, B, C) the UNIT normal pointing from
    the camera side DOWN through the ground (the ground-frame -z
    direction seen from the camera), so A*x + B*y + C*z + D = 0 holds on
    the plane.  The camera center evaluates to D, which is negative for
    any camera above the ground; camera_height == |D| == -D.

Virtual camera frame:
  - Shares its origin with the real camera.  Its y axis is the down
    normal (A, B, C), so its x/z plane is parallel to the ground plane.
    The rotation is the minimal one carrying the camera y axis onto the
    normal; the leftover yaw freedom is whatever that minimal rotation
    produces (only the parallelism property is contractual).
  - A ray heading toward the ground has a positive y component in this
    frame; lifting scales the unit-depth ray point by
    (camera_height - h_r) / y_v and maps it back to ground coordinates.

All angles are radians unless the name carries a _deg suffix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Tolerance for algebraic identities (orthonormality, unit normals).
ALGEBRAIC_TOL = 1e-9
# Rays closer than this to the plane direction count as parallel.
RAY_PARALLEL_TOL = 1e-9
# Cameras closer than this to the ground plane are degenerate.
MIN_CAMERA_HEIGHT = 1e-6


class GeometryError(ValueError):
    """A geometric operation is undefined for the given inputs."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation: apply(p) = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, RigidTransform)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __post_init__(self):
        rot = _readonly(self.rotation)
        tr = _readonly(self.translation)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if tr.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {tr.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tr))):
            raise ValueError("transform contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ALGEBRAIC_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ALGEBRAIC_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    def apply(self, points) -> np.ndarray:
        """Transform one (3,) point or an (..., 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot = self.rotation.T
        return RigidTransform(rot, -rot @ self.translation)


@dataclass(frozen=True)
class CameraRig:
    """Calibration for one roadside camera.

    f_x, f_y are focal lengths in pixels, (a_x, a_y) the principal
    point; ``extrinsic`` maps ground-frame points to camera-frame
    points.
    """

    f_x: float
    f_y: float
    a_x: float
    a_y: float
    extrinsic: RigidTransform
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0):
            raise ValueError("focal lengths must be positive")
        if not (math.isfinite(self.a_x) and math.isfinite(self.a_y)):
            raise ValueError("principal point must be finite")
        if not (self.image_width > 0 and self.image_height > 0):
            raise ValueError("image dimensions must be positive")

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array(
            [[self.f_x, 0.0, self.a_x], [0.0, self.f_y, self.a_y], [0.0, 0.0, 1.0]]
        )

    def camera_center_ground(self) -> np.ndarray:
        """Camera optical center expressed in ground coordinates."""
        ext = self.extrinsic
        return -ext.rotation.T @ ext.translation


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Virtual ground plane in camera coordinates plus lifting transforms.

    (a, b, c) is the unit down normal and d the plane offset (see the
    module docstring for the sign convention).  ``cam_to_virtual``
    rotates camera coordinates into the virtual camera frame and
    ``virtual_to_ground`` maps virtual-frame points to ground
    coordinates.
    """

    a: float
    b: float
    c: float
    d: float
    camera_height: float
    cam_to_virtual: np.ndarray
    virtual_to_ground: RigidTransform

    def __eq__(self, other):
        return (
            isinstance(other, GroundPlane)
            and (self.a, self.b, self.c, self.d, self.camera_height)
            == (other.a, other.b, other.c, other.d, other.camera_height)
            and np.array_equal(self.cam_to_virtual, other.cam_to_virtual)
            and self.virtual_to_ground == other.virtual_to_ground
        )

    def __post_init__(self):
        n = np.array([self.a, self.b, self.c])
        if abs(np.linalg.norm(n) - 1.0) > ALGEBRAIC_TOL:
            raise ValueError("plane normal is not unit length")
        if self.camera_height <= 0:
            raise ValueError("camera height must be positive")
        if abs(self.camera_height - abs(self.d)) > ALGEBRAIC_TOL:
            raise ValueError("camera height must equal |d|")
        m = _readonly(self.cam_to_virtual)
        if np.max(np.abs(m.T @ m - np.eye(3))) > ALGEBRAIC_TOL:
            raise ValueError("cam_to_virtual is not orthonormal")
        if np.max(np.abs(m @ n - np.array([0.0, 1.0, 0.0]))) > ALGEBRAIC_TOL:
            raise ValueError("cam_to_virtual must map the down normal to +y")
        # x_v and z_v axes must be horizontal in the ground frame.
        rot = self.virtual_to_ground.rotation
        if max(abs(rot[2, 0]), abs(rot[2, 2])) > ALGEBRAIC_TOL:
            raise ValueError("virtual x/z plane is not parallel to the ground")
        object.__setattr__(self, "cam_to_virtual", m)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


def _minimal_rotation_y_to(n: np.ndarray) -> np.ndarray:
    """Minimal rotation R with R @ e_y = n, for unit n."""
    e_y = np.array([0.0, 1.0, 0.0])
    w = np.cross(e_y, n)
    s = np.linalg.norm(w)
    cos_ang = float(e_y @ n)
    if s < 1e-12:
        if cos_ang > 0:
            return np.eye(3)
        # Camera y opposes the normal (upside-down rig): flip about z.
        return np.diag([-1.0, -1.0, 1.0])
    k = w / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1.0 - cos_ang) * (kx @ kx)


def ground_plane_from_extrinsics(rig: CameraRig) -> GroundPlane:
    """Express the ground plane z_g = 0 in camera coordinates.

    Raises GeometryError if the camera center lies on (or below) the
    ground plane.
    """
    rot = rig.extrinsic.rotation
    t = rig.extrinsic.translation
    up_cam = rot @ np.array([0.0, 0.0, 1.0])
    normal = -up_cam  # down normal, per module convention
    d = float(up_cam @ t)  # signed value of the camera center
    if abs(d) < MIN_CAMERA_HEIGHT:
        raise GeometryError("camera on ground plane")
    if d > 0:
        raise GeometryError("camera below ground plane")
    # Columns of the minimal rotation are the virtual axes in camera
    # coordinates (its y column is the down normal).
    basis = _minimal_rotation_y_to(normal)
    cam_to_virtual = basis.T
    virtual_to_ground = RigidTransform(rot.T @ basis, -rot.T @ t)
    return GroundPlane(
        # +0.0 normalizes any -0.0 component for clean printing.
        a=float(normal[0]) + 0.0,
        b=float(normal[1]) + 0.0,
        c=float(normal[2]) + 0.0,
        d=d,
        camera_height=-d,
        cam_to_virtual=cam_to_virtual,
        virtual_to_ground=virtual_to_ground,
    )


def depth_to_ground(rig: CameraRig, plane: GroundPlane, u: float, v: float) -> float:
    """Camera-frame z depth at which the ray through pixel (u, v) meets
    the virtual ground."""
    den = (
        plane.a * (u - rig.a_x) / rig.f_x
        + plane.b * (v - rig.a_y) / rig.f_y
        + plane.c
    )
    if abs(den) <= RAY_PARALLEL_TOL:
        raise GeometryError("ray parallel to ground")
    depth = -plane.d / den
    if depth <= 0:
        raise GeometryError("plane behind camera")
    return depth


def lift_to_ground(
    rig: CameraRig, plane: GroundPlane, u_c: float, v_c: float, h_r: float
) -> np.ndarray:
    """Lift a bottom-center pixel with relative height h_r to ground
    coordinates.

    The returned point satisfies z_g == h_r by construction.
    """
    if h_r >= plane.camera_height:
        raise GeometryError("relative height above camera")
    ray = np.array([(u_c - rig.a_x) / rig.f_x, (v_c - rig.a_y) / rig.f_y, 1.0])
    p_v = plane.cam_to_virtual @ ray
    y_v = p_v[1]
    if abs(y_v) <= RAY_PARALLEL_TOL:
        raise GeometryError("ray parallel to ground")
    if y_v < 0:
        raise GeometryError("plane behind camera")
    scale = (plane.camera_height - h_r) / y_v
    return plane.virtual_to_ground.apply(scale * p_v)


def project_to_image(rig: CameraRig, p_g) -> tuple[float, float]:
    """Pinhole projection of a ground-frame point to pixel coordinates."""
    pc = rig.extrinsic.apply(np.asarray(p_g, dtype=float))
    if pc[2] <= 1e-6:
        raise GeometryError("point behind camera")
    u = rig.f_x * pc[0] / pc[2] + rig.a_x
    v = rig.f_y * pc[1] / pc[2] + rig.a_y
    return float(u), float(v)


def height_sensitivity(
    camera_height: float, h_r: float, horizontal_range: float, delta_h: float
) -> float:
    """Horizontal location error induced by an h_r error of delta_h for
    an object at the given horizontal range from the camera foot point.

    Lifting scales horizontal range by (camera_height - h_r), so the
    error is exactly range * delta_h / (camera_height - h_r).
    """
    if camera_height <= h_r + delta_h:
        raise GeometryError("relative height above camera")
    return horizontal_range * delta_h / (camera_height - h_r)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box, ground frame, (x, y, z) at the bottom-face center."""

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float
    category: str = "car"
    score: float | None = None

    def __post_init__(self):
        if not all(
            math.isfinite(v) for v in (self.x, self.y, self.z, self.l, self.w, self.h)
        ):
            raise ValueError("box fields must be finite")
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError("box dimensions must be positive")
        th = math.remainder(self.theta, math.tau)
        if th <= -math.pi:
            th += math.tau
        object.__setattr__(self, "theta", th)
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")

    @property
    def bottom_center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


# Corner sign patterns in the documented order: (l, w, h) signs enumerate
# (---), (--+), (-+-), (-++), (+--), (+-+), (++-), (+++).
CORNER_SIGNS = np.array(
    [(sl, sw, sh) for sl in (-1.0, 1.0) for sw in (-1.0, 1.0) for sh in (-1.0, 1.0)]
)


def corners_from_parts(
    x: float, y: float, z: float, l: float, w: float, h: float, theta: float
) -> np.ndarray:
    """Eight box corners (8, 3) from raw parameters; see CORNER_SIGNS for
    ordering.  (x, y, z) is the bottom-face center; the +h/2 shift moves
    to the cuboid center before the signed half-extents are applied."""
    half = CORNER_SIGNS * np.array([l / 2.0, w / 2.0, h / 2.0])
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return half @ rot.T + np.array([x, y, z + h / 2.0])


def corners_of(box: Box3D) -> np.ndarray:
    """Eight ground-frame corners of the box, shape (8, 3)."""
    return corners_from_parts(box.x, box.y, box.z, box.l, box.w, box.h, box.theta)


def rig_from_pose(
    camera_height: float,
    pitch_deg: float,
    yaw_deg: float = 0.0,
    roll_deg: float = 0.0,
    f_x: float = 1000.0,
    f_y: float = 1000.0,
    a_x: float | None = None,
    a_y: float | None = None,
    image_width: int = 1536,
    image_height: int = 1024,
    ground_xy: tuple[float, float] = (0.0, 0.0),
) -> CameraRig:
    """Build a rig from a pose description: camera at
    (ground_xy, camera_height), optical axis yawed about ground +z,
    pitched down by pitch_deg, then rolled about the optical axis."""
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    roll = math.radians(roll_deg)
    forward = np.array(
        [math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), -math.sin(pitch)]
    )
    right0 = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down0 = np.cross(forward, right0)
    right = math.cos(roll) * right0 + math.sin(roll) * down0
    down = math.cos(roll) * down0 - math.sin(roll) * right0
    rot = np.vstack([right, down, forward])
    center = np.array([ground_xy[0], ground_xy[1], camera_height])
    extrinsic = RigidTransform(rot, -rot @ center)
    return CameraRig(
        f_x=f_x,
        f_y=f_y,
        a_x=image_width / 2.0 if a_x is None else a_x,
        a_y=image_height / 2.0 if a_y is None else a_y,
        extrinsic=extrinsic,
        image_width=image_width,
        image_height=image_height,
    )
