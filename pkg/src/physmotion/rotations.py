"""SO(3) helpers: exponential coordinates, quaternions, and their derivatives.

Conventions:
    - Rotation matrices are 3x3, right-handed, det +1.
    - Exponential coordinates v are axis * angle (radians); exp_so3(v) is the
      matrix exponential of the skew matrix of v.
    - Quaternions are (w, x, y, z), unit norm.
    - left_jacobian(v) maps exponential-coordinate rates to world-frame angular
      velocity of exp_so3(v): d/dt exp(v) = skew(left_jacobian(v) @ vdot) @ exp(v).
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that skew(a) @ b == cross(a, b)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of two 3-vectors without numpy's axis bookkeeping."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def exp_so3(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a series fallback near zero angle."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    k = skew(v)
    if angle < _SMALL_ANGLE:
        # sin(t)/t and (1-cos(t))/t^2 to O(t^4)
        a = 1.0 - angle**2 / 6.0
        b = 0.5 - angle**2 / 24.0
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Exponential coordinates of a rotation matrix, |result| <= pi.

    Computed through the quaternion representation, which stays well behaved
    near angle pi where the direct trace formula degrades.
    """
    return quat_to_exp(matrix_to_quat(rot))


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 (Shepperd's method)."""
    m = np.asarray(rot, dtype=float)
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_to_exp(q: np.ndarray) -> np.ndarray:
    w, xyz = q[0], np.asarray(q[1:], dtype=float)
    n = np.linalg.norm(xyz)
    if n < _SMALL_ANGLE:
        # theta/sin(theta/2) ~ 2/w for small angles
        return xyz * (2.0 / w if w != 0.0 else 2.0)
    angle = 2.0 * np.arctan2(n, w)
    return xyz * (angle / n)


def exp_to_quat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < _SMALL_ANGLE:
        half = 0.5 * v
        return np.concatenate([[1.0 - 0.5 * (angle / 2.0) ** 2], half])
    axis = v / angle
    return np.concatenate([[np.cos(angle / 2.0)], axis * np.sin(angle / 2.0)])


def left_jacobian(v: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): J_l(v) = I + A*skew(v) + B*skew(v)^2.

    A = (1-cos t)/t^2, B = (t-sin t)/t^3 with t = |v|.
    """
    v = np.asarray(v, dtype=float)
    t = np.linalg.norm(v)
    k = skew(v)
    if t < _SMALL_ANGLE:
        a = 0.5 - t**2 / 24.0
        b = 1.0 / 6.0 - t**2 / 120.0
    else:
        a = (1.0 - np.cos(t)) / t**2
        b = (t - np.sin(t)) / t**3
    return np.eye(3) + a * k + b * (k @ k)


def left_jacobian_dot(v: np.ndarray, vdot: np.ndarray) -> np.ndarray:
    """Time derivative of left_jacobian(v(t)) for given vdot = dv/dt.

    Used by the dynamics recursions: the angular acceleration contributed by a
    3-DoF exponential-coordinate joint is J_l(v) vddot + Jdot_l(v, vdot) vdot.
    """
    v = np.asarray(v, dtype=float)
    vdot = np.asarray(vdot, dtype=float)
    t = np.linalg.norm(v)
    k = skew(v)
    kd = skew(vdot)
    if t < 1e-4:
        # dA/dt = A'(t) * tdot with tdot = (v.vdot)/t; fold 1/t into the series
        a_bar = -1.0 / 12.0 + t**2 / 180.0
        b_bar = -1.0 / 60.0 + t**2 / 1260.0
        a = 0.5 - t**2 / 24.0
        b = 1.0 / 6.0 - t**2 / 120.0
    else:
        a_bar = (t * np.sin(t) - 2.0 * (1.0 - np.cos(t))) / t**4
        b_bar = (t * (1.0 - np.cos(t)) - 3.0 * (t - np.sin(t))) / t**5
        a = (1.0 - np.cos(t)) / t**2
        b = (t - np.sin(t)) / t**3
    vvd = float(v @ vdot)
    return vvd * (a_bar * k + b_bar * (k @ k)) + a * kd + b * (kd @ k + k @ kd)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return quat_to_matrix(q)
