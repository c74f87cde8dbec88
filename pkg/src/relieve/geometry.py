"""Pinhole camera model and SE(3) poses with exp/log maps.

Conventions used throughout the package:

- Pixel coordinates are continuous, (column, row) order, origin at the
  center of the top-left pixel.
- Poses are camera-to-world: ``X_world = R @ X_cam + t``, so the camera
  center in world coordinates is exactly ``t``.
- All arithmetic is float64; gradient checks at 1e-6 relative tolerance
  are not feasible in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle the Rodrigues coefficients switch to series
# expansions (the closed forms are 0/0 at zero).
SMALL_ANGLE = 1e-8
# Wider switch for coefficients whose closed form cancels catastrophically
# well above SMALL_ANGLE, e.g. (theta - sin(theta)) / theta^3.
SERIES_SWITCH = 1e-2

ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    """Domain error for geometric preconditions (bad depth, bad pose...)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole calibration: focal lengths, principal point, image size (px)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass(frozen=True)
class PoseSE3:
    """Camera-to-world rigid transform.

    ``rotation`` is a 3x3 orthonormal matrix with det +1, ``translation``
    the camera center in world units.
    """

    rotation: np.ndarray
    translation: np.ndarray
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self._validate:
            if R.shape != (3, 3):
                raise GeometryError(f"rotation must be 3x3, got {R.shape}")
            if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
                raise GeometryError("rotation is not orthonormal")
            if abs(np.linalg.det(R) - 1.0) > 1e-6:
                raise GeometryError("rotation must have det +1")

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3), _validate=False)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            _validate=False,
        )

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation, _validate=False)

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform camera-frame point(s) to world frame."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation


def backproject(u, d, intr: CameraIntrinsics) -> np.ndarray:
    """Lift pixel ``u`` at depth ``d`` to a camera-frame 3D point.

    Depth is the camera-frame z coordinate, so the result is
    ``d * ((ux - cx)/fx, (uy - cy)/fy, 1)``.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise GeometryError("pixel coordinates must be finite")
    d = float(d)
    if d <= 0:
        raise GeometryError(f"depth must be positive, got {d}")
    return d * np.array(
        [(u[0] - intr.cx) / intr.fx, (u[1] - intr.cy) / intr.fy, 1.0]
    )


def project(p, intr: CameraIntrinsics) -> np.ndarray:
    """Project a camera-frame point to pixel coordinates. Requires z > 0."""
    p = np.asarray(p, dtype=np.float64)
    if p[2] <= 0:
        raise GeometryError(f"point is behind the camera (z={p[2]})")
    return np.array(
        [intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy]
    )


def pixel_rays(intr: CameraIntrinsics, xs, ys) -> np.ndarray:
    """Unnormalized camera-frame ray directions (z = 1) for pixel arrays."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    return np.stack(
        [(xs - intr.cx) / intr.fx, (ys - intr.cy) / intr.fy, np.ones_like(xs)],
        axis=-1,
    )


def to_world(p_cam, pose: PoseSE3) -> np.ndarray:
    """Camera-frame point to world frame: R @ p + t."""
    return pose.apply(np.asarray(p_cam, dtype=np.float64))


def camera_center(pose: PoseSE3) -> np.ndarray:
    """World-frame camera center (the translation, by the c2w convention)."""
    return pose.translation.copy()


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _rot_coeffs(theta: float) -> tuple[float, float, float]:
    """Rodrigues coefficients (sinc, A, B) for angle theta.

    R = I + sinc*W + A*W^2,  V = I + A*W + B*W^2 with W = skew(omega).
    ``sinc = sin(t)/t``, ``A = (1-cos t)/t^2``, ``B = (t - sin t)/t^3``.
    """
    t2 = theta * theta
    if theta < SERIES_SWITCH:
        sinc = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        sinc = np.sin(theta) / theta
        # 1 - cos t = 2 sin^2(t/2) avoids cancellation for moderate t.
        a = 2.0 * np.sin(theta / 2.0) ** 2 / t2
        b = (theta - np.sin(theta)) / (t2 * theta)
    return sinc, a, b


def so3_exp(omega) -> np.ndarray:
    """Rodrigues rotation: exp of a 3-vector rotation tangent."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    sinc, a, _ = _rot_coeffs(theta)
    return np.eye(3) + sinc * W + a * (W @ W)


def left_jacobian(omega) -> np.ndarray:
    """Left Jacobian V of SO(3): d(exp) pullback and the translation mixer.

    se3_exp translation is V @ v, and dR/d(omega_j) = skew(V e_j) @ R.
    """
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    _, a, b = _rot_coeffs(theta)
    return np.eye(3) + a * W + b * (W @ W)


def left_jacobian_inv(omega) -> np.ndarray:
    """Closed-form inverse of the left Jacobian."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < SERIES_SWITCH:
        d = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        d = (1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + d * (W @ W)


def se3_exp(xi) -> PoseSE3:
    """SE(3) exponential of tangent ``xi = (omega, v)`` (6-vector)."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise GeometryError("tangent must be finite")
    omega, v = xi[:3], xi[3:]
    R = so3_exp(omega)
    t = left_jacobian(omega) @ v
    return PoseSE3(R, t, _validate=False)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle tangent of a rotation matrix, with ||omega|| in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    trace = float(np.trace(R))
    cos_theta = min(1.0, max(-1.0, (trace - 1.0) / 2.0))
    theta = float(np.arccos(cos_theta))
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return vee
    if theta < np.pi - 1e-4:
        return theta / np.sin(theta) * vee
    # Near pi the skew part vanishes; recover the axis from the symmetric
    # part R + R^T = 2 cos(t) I + 2 (1 - cos(t)) nn^T, fix signs from vee.
    nn = (R + R.T - 2.0 * cos_theta * np.eye(3)) / (2.0 * (1.0 - cos_theta))
    k = int(np.argmax(np.diag(nn)))
    axis = nn[:, k] / np.sqrt(max(nn[k, k], 1e-30))
    if vee @ axis < 0:
        axis = -axis
    return theta * axis


def se3_log(pose: PoseSE3) -> np.ndarray:
    """Inverse of se3_exp on the canonical domain (rotation angle <= pi)."""
    omega = so3_log(pose.rotation)
    v = left_jacobian_inv(omega) @ pose.translation
    return np.concatenate([omega, v])


def se3_exp_with_grads(xi):
    """se3_exp plus the data needed to pull loss gradients back to ``xi``.

    Returns ``(R, t, dR, dt_domega, V)`` where ``dR[j]`` is dR/d(omega_j)
    and ``dt_domega[:, j]`` is dt/d(omega_j); dt/dv is ``V`` itself.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    omega, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    W2 = W @ W
    sinc, a, b = _rot_coeffs(theta)
    R = np.eye(3) + sinc * W + a * W2
    V = np.eye(3) + a * W + b * W2
    t = V @ v

    # dR/d(omega_j) = skew(V e_j) @ R  (left Jacobian identity).
    dR = np.stack([skew(V[:, j]) @ R for j in range(3)])

    # dV/d(omega_j) = (A'/t) om_j W + A E_j + (B'/t) om_j W^2 + B (E_j W + W E_j)
    if theta < SERIES_SWITCH:
        ap_over_t = -1.0 / 12.0 + theta * theta / 180.0
        bp_over_t = -1.0 / 60.0 + theta * theta / 1260.0
    else:
        t4 = theta ** 4
        ap_over_t = (theta * np.sin(theta) - 2.0 * (1.0 - np.cos(theta))) / t4
        bp_over_t = (theta * (1.0 - np.cos(theta)) - 3.0 * (theta - np.sin(theta))) / (t4 * theta)
    dt_domega = np.empty((3, 3))
    for j in range(3):
        Ej = skew(np.eye(3)[j])
        dV = ap_over_t * omega[j] * W + a * Ej
        dV += bp_over_t * omega[j] * W2 + b * (Ej @ W + W @ Ej)
        dt_domega[:, j] = dV @ v
    return R, t, dR, dt_domega, V
