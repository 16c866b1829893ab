"""Floating-base articulated rigid-body model and its dynamics algorithms.

The skeleton is a fixed 24-body tree (SMPL joint topology). Generalized
coordinates q (75):

    q[0:3]   root translation (m)
    q[3:6]   root orientation, exponential coordinates (rad)
    q[6:75]  23 x 3 joint angles, exponential coordinates per joint

Velocities are coordinate rates (not body angular velocities); the left
Jacobian of SO(3) converts between the two inside the recursions. Each body's
center of mass sits at its joint origin and carries the body-frame inertia
from the model file.

Sign conventions: gravity enters the nonlinear-effects vector so that
unsupported free fall solves qdd_y = -9.81 with zero torques and contact
forces under tau + Jc^T lambda = M qdd + h.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, InvalidStateError
from .rotations import cross3, exp_so3, left_jacobian, left_jacobian_dot, skew

NUM_BODIES = 24
NV = 75  # 3 translation + 3 root orientation + 23 * 3 joints
DEFAULT_DT = 1.0 / 60.0
DEFAULT_GRAVITY = np.array([0.0, -9.81, 0.0])


@dataclass
class Body:
    name: str
    parent: int
    offset: np.ndarray  # translation from parent joint, parent frame (m)
    mass: float
    inertia: np.ndarray  # 3x3 body-frame inertia about the joint origin (kg m^2)
    end_effectors: Dict[str, np.ndarray] = field(default_factory=dict)


class HumanoidModel:
    """Immutable articulated model; safe to share across threads."""

    def __init__(self, bodies: Sequence[Body], gravity: np.ndarray = DEFAULT_GRAVITY):
        if len(bodies) != NUM_BODIES:
            raise InvalidInputError(f"model needs {NUM_BODIES} bodies, got {len(bodies)}")
        if bodies[0].parent != -1:
            raise InvalidInputError("body 0 must be the root (parent -1)")
        for i, b in enumerate(bodies[1:], start=1):
            if not 0 <= b.parent < i:
                raise InvalidInputError(
                    f"body {i} ({b.name}): parent {b.parent} must precede it in the tree"
                )
        for b in bodies:
            if b.mass <= 0.0:
                raise InvalidInputError(f"body {b.name}: mass must be positive")
            inertia = np.asarray(b.inertia, dtype=float)
            if inertia.shape != (3, 3) or np.max(np.abs(inertia - inertia.T)) > 1e-12:
                raise InvalidInputError(f"body {b.name}: inertia must be symmetric 3x3")
            if np.linalg.eigvalsh(inertia).min() <= 0.0:
                raise InvalidInputError(f"body {b.name}: inertia must be positive definite")
            b.offset = np.asarray(b.offset, dtype=float).reshape(3)
            b.inertia = inertia
        self.bodies: Tuple[Body, ...] = tuple(bodies)
        self.gravity = np.asarray(gravity, dtype=float).reshape(3)
        self.parents = np.array([b.parent for b in bodies])
        self.children: List[List[int]] = [[] for _ in range(NUM_BODIES)]
        for i in range(1, NUM_BODIES):
            self.children[bodies[i].parent].append(i)
        self.total_mass = float(sum(b.mass for b in bodies))
        # end effector registry in a stable order
        self.end_effectors: List[Tuple[str, int, np.ndarray]] = []
        for i, b in enumerate(bodies):
            for name, off in b.end_effectors.items():
                self.end_effectors.append((name, i, np.asarray(off, dtype=float).reshape(3)))
        self.end_effectors.sort(key=lambda e: e[0])

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def end_effector(self, name: str) -> Tuple[int, np.ndarray]:
        for ee_name, body, off in self.end_effectors:
            if ee_name == name:
                return body, off
        raise KeyError(name)

    @staticmethod
    def joint_cols(body: int) -> slice:
        """Generalized-coordinate columns driven by this body's joint."""
        if body == 0:
            return slice(0, 6)
        return slice(3 + 3 * body, 6 + 3 * body)


@dataclass
class GeneralizedState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    def __post_init__(self):
        for name in ("q", "qd", "qdd"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (NV,):
                raise InvalidStateError(f"{name} must have length {NV}, got {v.shape}")
            setattr(self, name, v)

    @staticmethod
    def zero() -> "GeneralizedState":
        return GeneralizedState(np.zeros(NV), np.zeros(NV), np.zeros(NV))

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.q.copy(), self.qd.copy(), self.qdd.copy())


@dataclass
class FKResult:
    rotations: np.ndarray  # (24, 3, 3) world rotations
    positions: np.ndarray  # (24, 3) world joint origins


def _joint_angles(q: np.ndarray, body: int) -> np.ndarray:
    return q[3 + 3 * body : 6 + 3 * body]


def forward_kinematics(model: HumanoidModel, q: np.ndarray) -> FKResult:
    """World transform of every body: parent transform * offset * joint rotation."""
    q = np.asarray(q, dtype=float)
    rot = np.empty((NUM_BODIES, 3, 3))
    pos = np.empty((NUM_BODIES, 3))
    rot[0] = exp_so3(q[3:6])
    pos[0] = q[0:3]
    for i in range(1, NUM_BODIES):
        p = model.parents[i]
        pos[i] = pos[p] + rot[p] @ model.bodies[i].offset
        rot[i] = rot[p] @ exp_so3(_joint_angles(q, i))
    return FKResult(rot, pos)


def end_effector_positions(model: HumanoidModel, fk: FKResult) -> Dict[str, np.ndarray]:
    return {
        name: fk.positions[body] + fk.rotations[body] @ off
        for name, body, off in model.end_effectors
    }


def _path_to_root(model: HumanoidModel, body: int) -> List[int]:
    path = []
    while body != -1:
        path.append(body)
        body = model.parents[body]
    return path


def point_jacobian(
    model: HumanoidModel,
    q: np.ndarray,
    body_id: int,
    local_point: np.ndarray,
    fk: Optional[FKResult] = None,
) -> np.ndarray:
    """3x75 Jacobian of a body-fixed point: world point velocity = J @ qd.

    Columns of joints off the root-to-body path are zero.
    """
    if not 0 <= body_id < NUM_BODIES:
        raise InvalidInputError(f"body_id {body_id} out of range")
    if fk is None:
        fk = forward_kinematics(model, q)
    p = fk.positions[body_id] + fk.rotations[body_id] @ np.asarray(local_point, dtype=float)
    jac = np.zeros((3, NV))
    jac[:, 0:3] = np.eye(3)
    for j in _path_to_root(model, body_id):
        if j == 0:
            axes = left_jacobian(q[3:6])
            cols = slice(3, 6)
        else:
            axes = fk.rotations[model.parents[j]] @ left_jacobian(_joint_angles(q, j))
            cols = slice(3 + 3 * j, 6 + 3 * j)
        jac[:, cols] = -skew(p - fk.positions[j]) @ axes
    return jac


def _spatial_inertia(mass: float, inertia_world: np.ndarray, r: np.ndarray) -> np.ndarray:
    """6x6 spatial inertia about the world origin, Plucker (angular; linear-at-origin)."""
    cc = skew(r)
    out = np.empty((6, 6))
    out[:3, :3] = inertia_world - mass * (cc @ cc)
    out[:3, 3:] = mass * cc
    out[3:, :3] = -mass * cc
    out[3:, 3:] = mass * np.eye(3)
    return out


def _motion_subspaces(model: HumanoidModel, q: np.ndarray, fk: FKResult) -> List[np.ndarray]:
    """Per-body world-frame motion subspace (6 x ndof), Plucker rows (omega; v_origin)."""
    subs: List[np.ndarray] = []
    s0 = np.zeros((6, 6))
    s0[3:, 0:3] = np.eye(3)  # root translation
    axes = left_jacobian(q[3:6])
    s0[:3, 3:6] = axes
    s0[3:, 3:6] = skew(fk.positions[0]) @ axes  # v_origin = r x omega... see note below
    subs.append(s0)
    for i in range(1, NUM_BODIES):
        axes = fk.rotations[model.parents[i]] @ left_jacobian(_joint_angles(q, i))
        s = np.empty((6, 3))
        s[:3] = axes
        s[3:] = skew(fk.positions[i]) @ axes
        subs.append(s)
    return subs


def mass_matrix(model: HumanoidModel, q: np.ndarray) -> np.ndarray:
    """Joint-space inertia matrix by the composite-rigid-body algorithm.

    Composite spatial inertias are accumulated leaf-to-root in world
    coordinates; block (i, j) couples joint i with its ancestor j through the
    composite inertia of the deeper body. Symmetric by construction.
    """
    q = np.asarray(q, dtype=float)
    fk = forward_kinematics(model, q)
    subs = _motion_subspaces(model, q, fk)
    composite = [
        _spatial_inertia(b.mass, fk.rotations[i] @ b.inertia @ fk.rotations[i].T, fk.positions[i])
        for i, b in enumerate(model.bodies)
    ]
    for i in range(NUM_BODIES - 1, 0, -1):
        composite[model.parents[i]] += composite[i]

    m = np.zeros((NV, NV))
    for i in range(NUM_BODIES - 1, -1, -1):
        cols_i = model.joint_cols(i)
        f = composite[i] @ subs[i]
        m[cols_i, cols_i] = subs[i].T @ f
        j = model.parents[i]
        while j != -1:
            cols_j = model.joint_cols(j)
            block = subs[j].T @ f
            m[cols_j, cols_i] = block
            m[cols_i, cols_j] = block.T
            j = model.parents[j]
    return m


def inverse_dynamics(
    model: HumanoidModel, q: np.ndarray, qd: np.ndarray, qdd: np.ndarray
) -> np.ndarray:
    """Generalized forces for the given motion, recursive Newton-Euler.

    Returns M(q) qdd + h(q, qd); gravity is folded in through a fictitious
    base acceleration of -gravity.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    fk = forward_kinematics(model, q)
    rot, pos = fk.rotations, fk.positions

    omega = np.empty((NUM_BODIES, 3))
    omega_dot = np.empty((NUM_BODIES, 3))
    acc = np.empty((NUM_BODIES, 3))  # linear acceleration of the joint origin
    axes_cache: List[np.ndarray] = [np.empty(0)] * NUM_BODIES

    jl_root = left_jacobian(q[3:6])
    axes_cache[0] = jl_root
    omega[0] = jl_root @ qd[3:6]
    omega_dot[0] = jl_root @ qdd[3:6] + left_jacobian_dot(q[3:6], qd[3:6]) @ qd[3:6]
    acc[0] = qdd[0:3] - model.gravity

    for i in range(1, NUM_BODIES):
        p = model.parents[i]
        th, thd, thdd = _joint_angles(q, i), _joint_angles(qd, i), _joint_angles(qdd, i)
        d = rot[p] @ model.bodies[i].offset
        jl = left_jacobian(th)
        axes = rot[p] @ jl
        axes_cache[i] = axes
        w_rel = axes @ thd
        omega[i] = omega[p] + w_rel
        omega_dot[i] = (
            omega_dot[p]
            + cross3(omega[p], w_rel)
            + rot[p] @ (jl @ thdd + left_jacobian_dot(th, thd) @ thd)
        )
        acc[i] = acc[p] + cross3(omega_dot[p], d) + cross3(omega[p], cross3(omega[p], d))

    force = np.empty((NUM_BODIES, 3))
    moment = np.empty((NUM_BODIES, 3))
    for i in range(NUM_BODIES):
        b = model.bodies[i]
        inertia_w = rot[i] @ b.inertia @ rot[i].T
        force[i] = b.mass * acc[i]
        moment[i] = inertia_w @ omega_dot[i] + cross3(omega[i], inertia_w @ omega[i])

    tau = np.zeros(NV)
    for i in range(NUM_BODIES - 1, 0, -1):
        p = model.parents[i]
        tau[3 + 3 * i : 6 + 3 * i] = axes_cache[i].T @ moment[i]
        force[p] += force[i]
        moment[p] += moment[i] + cross3(pos[i] - pos[p], force[i])
    tau[0:3] = force[0]
    tau[3:6] = axes_cache[0].T @ moment[0]
    return tau


def nonlinear_effects(model: HumanoidModel, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Coriolis, centrifugal and gravity generalized forces (RNEA with qdd = 0)."""
    return inverse_dynamics(model, q, qd, np.zeros(NV))


def _velocity_recursion(model: HumanoidModel, q: np.ndarray, qd: np.ndarray, fk: FKResult):
    rot, pos = fk.rotations, fk.positions
    omega = np.empty((NUM_BODIES, 3))
    vel = np.empty((NUM_BODIES, 3))
    omega[0] = left_jacobian(q[3:6]) @ qd[3:6]
    vel[0] = qd[0:3]
    for i in range(1, NUM_BODIES):
        p = model.parents[i]
        d = rot[p] @ model.bodies[i].offset
        omega[i] = omega[p] + rot[p] @ (left_jacobian(_joint_angles(q, i)) @ _joint_angles(qd, i))
        vel[i] = vel[p] + cross3(omega[p], d)
    return omega, vel


@dataclass
class BodyKinematics:
    """Per-body velocity state and velocity-product (qdd = 0) accelerations."""

    fk: FKResult
    omega: np.ndarray  # (24, 3) world angular velocities
    vel: np.ndarray  # (24, 3) joint-origin linear velocities
    omega_dot_bias: np.ndarray  # (24, 3) angular acceleration at qdd = 0
    acc_bias: np.ndarray  # (24, 3) joint-origin acceleration at qdd = 0, no gravity

    def point_velocity(self, body_id: int, local_point: np.ndarray) -> np.ndarray:
        arm = self.fk.rotations[body_id] @ np.asarray(local_point, dtype=float)
        return self.vel[body_id] + cross3(self.omega[body_id], arm)

    def point_bias_acceleration(self, body_id: int, local_point: np.ndarray) -> np.ndarray:
        arm = self.fk.rotations[body_id] @ np.asarray(local_point, dtype=float)
        return (
            self.acc_bias[body_id]
            + cross3(self.omega_dot_bias[body_id], arm)
            + cross3(self.omega[body_id], cross3(self.omega[body_id], arm))
        )


def body_kinematics(
    model: HumanoidModel, q: np.ndarray, qd: np.ndarray, fk: Optional[FKResult] = None
) -> BodyKinematics:
    """One forward sweep collecting every body's velocity and bias acceleration."""
    if fk is None:
        fk = forward_kinematics(model, q)
    rot = fk.rotations
    omega = np.empty((NUM_BODIES, 3))
    vel = np.empty((NUM_BODIES, 3))
    omega_dot = np.empty((NUM_BODIES, 3))
    acc = np.empty((NUM_BODIES, 3))
    omega[0] = left_jacobian(q[3:6]) @ qd[3:6]
    vel[0] = qd[0:3]
    omega_dot[0] = left_jacobian_dot(q[3:6], qd[3:6]) @ qd[3:6]
    acc[0] = 0.0
    for i in range(1, NUM_BODIES):
        p = model.parents[i]
        th, thd = _joint_angles(q, i), _joint_angles(qd, i)
        d = rot[p] @ model.bodies[i].offset
        w_rel = rot[p] @ (left_jacobian(th) @ thd)
        omega[i] = omega[p] + w_rel
        vel[i] = vel[p] + cross3(omega[p], d)
        omega_dot[i] = (
            omega_dot[p] + cross3(omega[p], w_rel) + rot[p] @ (left_jacobian_dot(th, thd) @ thd)
        )
        acc[i] = acc[p] + cross3(omega_dot[p], d) + cross3(omega[p], cross3(omega[p], d))
    return BodyKinematics(fk, omega, vel, omega_dot, acc)


def point_velocity(
    model: HumanoidModel,
    q: np.ndarray,
    qd: np.ndarray,
    body_id: int,
    local_point: np.ndarray,
    fk: Optional[FKResult] = None,
) -> np.ndarray:
    if fk is None:
        fk = forward_kinematics(model, q)
    omega, vel = _velocity_recursion(model, q, qd, fk)
    arm = fk.rotations[body_id] @ np.asarray(local_point, dtype=float)
    return vel[body_id] + cross3(omega[body_id], arm)


def point_bias_acceleration(
    model: HumanoidModel,
    q: np.ndarray,
    qd: np.ndarray,
    body_id: int,
    local_point: np.ndarray,
    fk: Optional[FKResult] = None,
) -> np.ndarray:
    """Jdot @ qd for the point: its acceleration with qdd = 0 and no gravity."""
    if fk is None:
        fk = forward_kinematics(model, q)
    rot, pos = fk.rotations, fk.positions
    omega = np.empty((NUM_BODIES, 3))
    omega_dot = np.empty((NUM_BODIES, 3))
    acc = np.empty((NUM_BODIES, 3))
    omega[0] = left_jacobian(q[3:6]) @ qd[3:6]
    omega_dot[0] = left_jacobian_dot(q[3:6], qd[3:6]) @ qd[3:6]
    acc[0] = 0.0
    for i in range(1, NUM_BODIES):
        p = model.parents[i]
        th, thd = _joint_angles(q, i), _joint_angles(qd, i)
        d = rot[p] @ model.bodies[i].offset
        w_rel = rot[p] @ (left_jacobian(th) @ thd)
        omega[i] = omega[p] + w_rel
        omega_dot[i] = (
            omega_dot[p] + cross3(omega[p], w_rel) + rot[p] @ (left_jacobian_dot(th, thd) @ thd)
        )
        acc[i] = acc[p] + cross3(omega_dot[p], d) + cross3(omega[p], cross3(omega[p], d))
    arm = rot[body_id] @ np.asarray(local_point, dtype=float)
    return (
        acc[body_id]
        + cross3(omega_dot[body_id], arm)
        + cross3(omega[body_id], cross3(omega[body_id], arm))
    )


def integrate(state: GeneralizedState, dt: float) -> GeneralizedState:
    """Explicit update: position with the current velocity, then velocity.

        q(t+1)  = q(t)  + qd(t) dt
        qd(t+1) = qd(t) + qdd(t) dt

    Applied component-wise to all generalized coordinates, including the
    exponential rotation coordinates.
    """
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    if not (
        np.isfinite(state.q).all() and np.isfinite(state.qd).all() and np.isfinite(state.qdd).all()
    ):
        raise InvalidStateError("state contains non-finite values")
    return GeneralizedState(
        state.q + state.qd * dt,
        state.qd + state.qdd * dt,
        state.qdd.copy(),
    )


def kinetic_energy(model: HumanoidModel, q: np.ndarray, qd: np.ndarray) -> float:
    m = mass_matrix(model, q)
    return 0.5 * float(qd @ m @ qd)


# --- model file I/O -------------------------------------------------------


def load_model(path: str | Path) -> HumanoidModel:
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def model_from_dict(doc: dict) -> HumanoidModel:
    bodies = []
    for rec in doc["bodies"]:
        if "inertia" in rec:
            inertia = np.asarray(rec["inertia"], dtype=float)
        else:
            inertia = np.diag(np.asarray(rec["inertia_diag"], dtype=float))
        ee = {
            e["name"]: np.asarray(e["offset_xyz"], dtype=float)
            for e in rec.get("end_effectors", [])
        }
        bodies.append(
            Body(
                name=rec["name"],
                parent=int(rec["parent"]),
                offset=np.asarray(rec["offset_xyz"], dtype=float),
                mass=float(rec["mass"]),
                inertia=inertia,
                end_effectors=ee,
            )
        )
    gravity = np.asarray(doc.get("gravity", DEFAULT_GRAVITY), dtype=float)
    return HumanoidModel(bodies, gravity)


def save_model(model: HumanoidModel, path: str | Path) -> None:
    doc = {
        "name": "physmotion-humanoid",
        "gravity": [float(v) for v in model.gravity],
        "bodies": [
            {
                "name": b.name,
                "parent": int(b.parent),
                "offset_xyz": [float(v) for v in b.offset],
                "mass": float(b.mass),
                "inertia": [[float(v) for v in row] for row in b.inertia],
                "end_effectors": [
                    {"name": n, "offset_xyz": [float(v) for v in off]}
                    for n, off in b.end_effectors.items()
                ],
            }
            for b in model.bodies
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


_default_model_cache: Optional[HumanoidModel] = None


def default_model() -> HumanoidModel:
    """The shipped 24-body skeleton (70 kg anthropometric defaults)."""
    global _default_model_cache
    if _default_model_cache is None:
        path = resources.files("physmotion").joinpath("data/default_model.json")
        with path.open() as fh:
            _default_model_cache = model_from_dict(json.load(fh))
    return _default_model_cache
