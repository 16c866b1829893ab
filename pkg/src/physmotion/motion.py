"""Motion sequences and their line-delimited JSON file format.

A motion file is one header line followed by one record per frame:

    {"schema": "physmotion.motion/1", "fps": 60.0, "frames": 120}
    {"frame": 0, "root_trans_xyz": [...], "root_quat_wxyz": [...],
     "joint_angles": [[...] x 23], "joint_positions": [[...] x 24]?,
     "contacts": [bool x 4]?}

Rotations are matrices in memory and quaternions (w, x, y, z) on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError, MotionFormatError
from .humanoid import NV, HumanoidModel, forward_kinematics
from .rotations import exp_so3, log_so3, matrix_to_quat, quat_to_matrix
from .scene import ContactLabels

SCHEMA = "physmotion.motion/1"
NUM_JOINTS = 23  # articulated joints beside the root


@dataclass
class MotionSequence:
    frame_rate: float
    root_trans: np.ndarray  # (T, 3)
    root_rot: np.ndarray  # (T, 3, 3)
    joint_angles: np.ndarray  # (T, 23, 3) exponential coordinates
    joint_positions: Optional[np.ndarray] = None  # (T, 24, 3) world
    contacts: Optional[ContactLabels] = None

    def __post_init__(self):
        if self.frame_rate <= 0.0:
            raise InvalidInputError("frame_rate must be positive")
        self.root_trans = np.asarray(self.root_trans, dtype=float).reshape(-1, 3)
        t = len(self.root_trans)
        self.root_rot = np.asarray(self.root_rot, dtype=float).reshape(t, 3, 3)
        self.joint_angles = np.asarray(self.joint_angles, dtype=float).reshape(t, NUM_JOINTS, 3)
        if self.joint_positions is not None:
            self.joint_positions = np.asarray(self.joint_positions, dtype=float).reshape(t, 24, 3)
        if self.contacts is not None and len(self.contacts) != t:
            raise InvalidInputError("contacts length differs from frame count")
        for name in ("root_trans", "root_rot", "joint_angles"):
            if not np.isfinite(getattr(self, name)).all():
                raise InvalidInputError(f"{name} contains non-finite values")
        if self.joint_positions is not None and not np.isfinite(self.joint_positions).all():
            raise InvalidInputError("joint_positions contains non-finite values")

    def __len__(self) -> int:
        return len(self.root_trans)

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def copy(self) -> "MotionSequence":
        return MotionSequence(
            self.frame_rate,
            self.root_trans.copy(),
            self.root_rot.copy(),
            self.joint_angles.copy(),
            None if self.joint_positions is None else self.joint_positions.copy(),
            None if self.contacts is None else ContactLabels(self.contacts.data.copy()),
        )

    def generalized_position(self, t: int, previous: Optional[np.ndarray] = None) -> np.ndarray:
        """q vector for frame t; exponential coordinates are kept continuous
        with the previous frame's q when one is supplied."""
        q = np.empty(NV)
        q[0:3] = self.root_trans[t]
        q[3:6] = _continuous_log(self.root_rot[t], None if previous is None else previous[3:6])
        for j in range(NUM_JOINTS):
            sl = slice(6 + 3 * j, 9 + 3 * j)
            prev = None if previous is None else previous[sl]
            q[sl] = _continuous_exp_coords(self.joint_angles[t, j], prev)
        return q

    def with_joint_positions(self, model: HumanoidModel) -> "MotionSequence":
        """Fill joint_positions by forward kinematics of each frame."""
        out = self.copy()
        positions = np.empty((len(self), 24, 3))
        for t in range(len(self)):
            fk = forward_kinematics(model, self.generalized_position(t))
            positions[t] = fk.positions
        out.joint_positions = positions
        return out


def _continuous_log(rot: np.ndarray, previous: Optional[np.ndarray]) -> np.ndarray:
    return _continuous_exp_coords(log_so3(rot), previous)


def _continuous_exp_coords(v: np.ndarray, previous: Optional[np.ndarray]) -> np.ndarray:
    """Pick the 2*pi-equivalent representation closest to the previous frame."""
    v = np.asarray(v, dtype=float)
    if previous is None:
        return v.copy()
    best = v
    best_d = float(np.linalg.norm(v - previous))
    norm = float(np.linalg.norm(v))
    if norm > 1e-12:
        for k in (-1, 1):
            alt = v * (1.0 + k * 2.0 * np.pi / norm)
            d = float(np.linalg.norm(alt - previous))
            if d < best_d:
                best, best_d = alt, d
    return best.copy()


def save_motion(seq: MotionSequence, path: str | Path) -> None:
    with open(path, "w") as fh:
        header = {"schema": SCHEMA, "fps": float(seq.frame_rate), "frames": len(seq)}
        fh.write(json.dumps(header) + "\n")
        for t in range(len(seq)):
            rec = {
                "frame": t,
                "root_trans_xyz": [float(v) for v in seq.root_trans[t]],
                "root_quat_wxyz": [float(v) for v in matrix_to_quat(seq.root_rot[t])],
                "joint_angles": [[float(v) for v in row] for row in seq.joint_angles[t]],
            }
            if seq.joint_positions is not None:
                rec["joint_positions"] = [
                    [float(v) for v in row] for row in seq.joint_positions[t]
                ]
            if seq.contacts is not None:
                rec["contacts"] = [bool(v) for v in seq.contacts.data[t]]
            fh.write(json.dumps(rec) + "\n")


def _require_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise MotionFormatError(f"{where}[{','.join(str(i) for i in bad)}] is not finite")
    return arr


def load_motion(path: str | Path) -> MotionSequence:
    with open(path) as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise MotionFormatError(f"{path}:1: invalid header: {exc}") from exc
        if header.get("schema") != SCHEMA:
            raise MotionFormatError(
                f"{path}:1: schema {header.get('schema')!r} not supported (expected {SCHEMA!r})"
            )
        fps = float(header.get("fps", 0.0))
        if fps <= 0.0:
            raise MotionFormatError(f"{path}:1: fps must be positive")

        trans, rots, angles = [], [], []
        positions, contacts = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MotionFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            where = f"{path}:{lineno}"
            try:
                t = _require_finite(
                    np.asarray(rec["root_trans_xyz"], dtype=float).reshape(3),
                    f"{where}: root_trans_xyz",
                )
                quat = _require_finite(
                    np.asarray(rec["root_quat_wxyz"], dtype=float).reshape(4),
                    f"{where}: root_quat_wxyz",
                )
                ang = _require_finite(
                    np.asarray(rec["joint_angles"], dtype=float).reshape(NUM_JOINTS, 3),
                    f"{where}: joint_angles",
                )
            except (KeyError, ValueError) as exc:
                raise MotionFormatError(f"{where}: missing or malformed field: {exc}") from exc
            trans.append(t)
            rots.append(quat_to_matrix(quat))
            angles.append(ang)
            if "joint_positions" in rec:
                positions.append(
                    _require_finite(
                        np.asarray(rec["joint_positions"], dtype=float).reshape(24, 3),
                        f"{where}: joint_positions",
                    )
                )
            if "contacts" in rec:
                contacts.append([bool(v) for v in rec["contacts"]])

    if not trans:
        raise MotionFormatError(f"{path}: no frames")
    n = len(trans)
    if positions and len(positions) != n:
        raise MotionFormatError(f"{path}: joint_positions present on only some frames")
    if contacts and len(contacts) != n:
        raise MotionFormatError(f"{path}: contacts present on only some frames")
    expected = int(header.get("frames", n))
    if expected != n:
        raise MotionFormatError(f"{path}: header declares {expected} frames, found {n}")
    return MotionSequence(
        frame_rate=fps,
        root_trans=np.array(trans),
        root_rot=np.array(rots),
        joint_angles=np.array(angles),
        joint_positions=np.array(positions) if positions else None,
        contacts=ContactLabels(np.array(contacts, dtype=bool)) if contacts else None,
    )


def resample_motion(seq: MotionSequence, target_fps: float) -> MotionSequence:
    """Linear resampling onto a uniform grid at target_fps (same time span).

    Root rotations are interpolated through normalized quaternion lerp; other
    channels linearly. Returns the input unchanged when rates already match.
    """
    if abs(target_fps - seq.frame_rate) < 1e-12:
        return seq
    n = len(seq)
    duration = (n - 1) / seq.frame_rate
    m = max(2, int(round(duration * target_fps)) + 1)
    src_t = np.arange(n) / seq.frame_rate
    dst_t = np.minimum(np.arange(m) / target_fps, src_t[-1])

    def interp(arr: np.ndarray) -> np.ndarray:
        flat = arr.reshape(n, -1)
        out = np.empty((m, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(dst_t, src_t, flat[:, c])
        return out.reshape((m,) + arr.shape[1:])

    quats = np.array([matrix_to_quat(r) for r in seq.root_rot])
    # keep quaternion hemisphere consistent before lerping
    for i in range(1, n):
        if quats[i] @ quats[i - 1] < 0:
            quats[i] = -quats[i]
    q_new = interp(quats)
    q_new /= np.linalg.norm(q_new, axis=1, keepdims=True)

    contacts = None
    if seq.contacts is not None:
        idx = np.clip(np.round(dst_t * seq.frame_rate).astype(int), 0, n - 1)
        contacts = ContactLabels(seq.contacts.data[idx])
    return MotionSequence(
        frame_rate=target_fps,
        root_trans=interp(seq.root_trans),
        root_rot=np.array([quat_to_matrix(qv) for qv in q_new]),
        joint_angles=interp(seq.joint_angles),
        joint_positions=None if seq.joint_positions is None else interp(seq.joint_positions),
        contacts=contacts,
    )


def sequence_from_generalized(
    frame_rate: float,
    q_frames: np.ndarray,
    model: HumanoidModel,
    contacts: Optional[ContactLabels] = None,
) -> MotionSequence:
    """Build a sequence (with joint positions) from per-frame q vectors."""
    q_frames = np.asarray(q_frames, dtype=float).reshape(-1, NV)
    n = len(q_frames)
    trans = q_frames[:, 0:3].copy()
    rots = np.array([exp_so3(q[3:6]) for q in q_frames])
    angles = q_frames[:, 6:].reshape(n, NUM_JOINTS, 3).copy()
    positions = np.empty((n, 24, 3))
    for t in range(n):
        positions[t] = forward_kinematics(model, q_frames[t]).positions
    return MotionSequence(frame_rate, trans, rots, angles, positions, contacts)
