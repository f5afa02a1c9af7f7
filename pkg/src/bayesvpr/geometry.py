"""SE(3)/SO(3) primitives: exp/log maps, composition, a weighted pose
metric, and chordal rotation averaging.

Conventions: rotations are 3x3 orthonormal matrices acting on column
vectors, twists are split into a translational part ``rho`` (meters) and a
rotational part ``phi`` (radians, axis-angle). All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMean

# Below this rotation angle the closed-form exp/log coefficients are
# replaced by their Taylor expansions.  The threshold is set where the
# 1 - cos(theta) cancellation starts eating significant bits (error grows
# like eps/theta^2), well before the formulas hit 0/0.
_SMALL_ANGLE = 1e-2


@dataclass(frozen=True)
class Pose:
    """Rigid-body transform: x_world = R @ x_local + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def orthonormality_defect(self) -> float:
        """Frobenius distance of R'R from the identity."""
        return float(np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)))


@dataclass(frozen=True)
class Twist:
    """se(3) increment: rho translational (m), phi rotational (rad)."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def __neg__(self) -> "Twist":
        return Twist(-self.rho, -self.phi)


@dataclass(frozen=True)
class PoseMetricParams:
    """Weight of the rotational term: meters charged per radian."""

    alpha: float = 15.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _skew_batch(v: np.ndarray) -> np.ndarray:
    """(M, 3) -> (M, 3, 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _exp_coefficients(theta_sq: np.ndarray):
    """Coefficients a, b, c of R = I + aK + bK^2 and J = I + bK + cK^2.

    Taylor branches keep the ratios finite through theta -> 0.
    """
    theta = np.sqrt(theta_sq)
    small = theta < _SMALL_ANGLE
    # Guard the denominators; the guarded lanes are overwritten below.
    safe = np.where(small, 1.0, theta)
    safe_sq = safe * safe
    a = np.where(small, 1.0 - theta_sq / 6.0 * (1.0 - theta_sq / 20.0),
                 np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta_sq / 24.0 * (1.0 - theta_sq / 30.0),
                 (1.0 - np.cos(safe)) / safe_sq)
    c = np.where(small, 1.0 / 6.0 - theta_sq / 120.0 * (1.0 - theta_sq / 42.0),
                 (safe - np.sin(safe)) / (safe_sq * safe))
    return a, b, c


def exp_map_batch(xi: np.ndarray):
    """Vectorized SE(3) exponential: (M, 6) twists -> (M,3,3), (M,3)."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    theta_sq = np.einsum("...i,...i->...", phi, phi)
    a, b, c = _exp_coefficients(theta_sq)
    K = _skew_batch(phi)
    K2 = K @ K
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2
    J = eye + b[..., None, None] * K + c[..., None, None] * K2
    t = np.einsum("...ij,...j->...i", J, rho)
    return R, t


def exp_map(xi: Twist) -> Pose:
    """SE(3) exponential of a twist; total on all finite inputs."""
    R, t = exp_map_batch(xi.vector()[None, :])
    return Pose(R[0], t[0])


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (qw, qx, qy, qz), Hamilton convention, qw >= 0.

    Shepperd's pivoting keeps every branch well-conditioned.
    """
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    if q[0] == 0.0:
        # 180 degree rotations: pin the vector sign so the form is unique.
        q[1:] = _canonical_axis_sign(q[1:])
    return q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _canonical_axis_sign(axis: np.ndarray) -> np.ndarray:
    """Flip the axis so its largest-magnitude component is positive."""
    idx = int(np.argmax(np.abs(axis)))
    return -axis if axis[idx] < 0.0 else axis


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation, angle in [0, pi].

    Routed through the quaternion so the pi neighborhood stays stable; at
    exactly pi the axis sign follows the largest-component-positive rule.
    """
    q = rotation_to_quaternion(R)
    qw, qv = q[0], q[1:]
    s = np.linalg.norm(qv)
    if s < 1e-12:
        return 2.0 * qv  # first order: q ~ (1, phi/2)
    angle = 2.0 * math.atan2(s, qw)
    if qw <= 1e-9:
        qv = _canonical_axis_sign(qv)
    return (angle / s) * qv


def _left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    theta_sq = float(phi @ phi)
    K = skew(phi)
    if theta_sq < _SMALL_ANGLE ** 2:
        e = 1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
    else:
        theta = math.sqrt(theta_sq)
        # 1/theta^2 * (1 - (theta/2) cot(theta/2)); finite on (0, pi].
        e = (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / theta_sq
    return np.eye(3) - 0.5 * K + e * (K @ K)


def log_map(T: Pose) -> Twist:
    """SE(3) logarithm; inverse of exp_map with ||phi|| in [0, pi]."""
    phi = so3_log(T.rotation)
    rho = _left_jacobian_inverse(phi) @ T.translation
    return Twist(rho, phi)


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation to M: SVD projection with determinant correction."""
    U, s, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def compose(T: Pose, xi: Twist) -> Pose:
    """Right-compose a twist onto a pose: T * exp(xi)."""
    out = T @ exp_map(xi)
    if out.orthonormality_defect() > 1e-9:
        out = Pose(project_to_rotation(out.rotation), out.translation)
    return out


def compose_batch(Ra, ta, Rb, tb):
    """Pose product (Ra,ta) * (Rb,tb) over leading batch dimensions."""
    R = Ra @ Rb
    t = np.einsum("...ij,...j->...i", Ra, tb) + ta
    return R, t


def rotation_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi]."""
    tr = float(np.sum(R1 * R2))  # trace(R1' R2)
    return math.acos(min(1.0, max(-1.0, 0.5 * (tr - 1.0))))


def rotation_angles_cross(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Pairwise geodesic angles: (M,3,3) x (N,3,3) -> (M,N)."""
    tr = Ra.reshape(-1, 9) @ Rb.reshape(-1, 9).T
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def rotation_angles_paired(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Elementwise geodesic angles of two equally shaped rotation stacks."""
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def pose_distance(T1: Pose, T2: Pose, params: PoseMetricParams) -> float:
    """Translation gap plus alpha-weighted rotation angle."""
    dt = float(np.linalg.norm(T1.translation - T2.translation))
    # quaternion-routed angle: exact zero for identical rotations, where the
    # arccos-of-trace form loses ~sqrt(eps)
    dr = float(np.linalg.norm(so3_log(T1.rotation.T @ T2.rotation)))
    return dt + params.alpha * dr


def rotation_chordal_mean(rotations, weights) -> np.ndarray:
    """Weighted chordal average: project sum(w_i R_i) back onto SO(3).

    Raises DegenerateMean when the weighted sum loses rank (smallest
    singular value under 1e-12), meaning the average is ambiguous.
    """
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if Rs.shape[0] == 0:
        raise ValueError("need at least one rotation")
    if Rs.shape[0] != w.shape[0]:
        raise ValueError("rotations and weights must have equal length")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    S = np.einsum("m,mij->ij", w, Rs)
    U, s, Vt = np.linalg.svd(S)
    if s[-1] < 1e-12:
        raise DegenerateMean(f"weighted rotation sum is rank-deficient (sigma_min={s[-1]:.3e})")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# --- pose row serialization: "x y z qw qx qy qz" --------------------------

def pose_to_row(pose: Pose) -> str:
    q = rotation_to_quaternion(pose.rotation)
    vals = list(pose.translation) + list(q)
    return " ".join(format(v, ".17g") for v in vals)


def pose_from_row(row: str) -> Pose:
    parts = row.split()
    if len(parts) != 7:
        raise ValueError(f"pose row needs 7 fields, got {len(parts)}")
    vals = [float(p) for p in parts]
    return Pose(quaternion_to_rotation(vals[3:]), vals[:3])


def yaw_pitch_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Rotation from heading (about +z) and pitch (about +y)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return Rz @ Ry
