"""End-to-end run configuration and orchestration.

Stage order: camera-frame conversion (when a camera trajectory is given),
One-Euro filtering of pose and translation, height-map construction, physics
refinement, metrics. Outputs: refined motion file, per-frame forces file,
metric report (JSON + table). Runs are deterministic for a fixed config.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .frames import FilterParams, Trajectory, camera_to_world, load_trajectory, one_euro_filter
from .humanoid import NV, HumanoidModel, default_model, load_model
from .metrics import MetricReport, evaluate
from .motion import MotionSequence, load_motion, save_motion
from .optimizer import FrameSolution, PDGains, QPSettings, refine_sequence
from .rotations import exp_so3
from .scene import (
    HeightMap,
    build_height_map,
    load_contacts_csv,
    load_obj,
    save_height_map,
)

log = logging.getLogger("physmotion")

ABLATION_PRESETS = {
    "only-etheta": {"use_position_pd": False},
    "only-er": {"use_angle_pd": False},
    "flat-no-root": {"use_height_map": False, "use_root_supervision": False},
}


@dataclass
class RunConfig:
    motion_path: str
    mesh_path: Optional[str] = None
    gt_motion_path: Optional[str] = None
    camera_trajectory_path: Optional[str] = None
    contacts_path: Optional[str] = None
    model_path: Optional[str] = None
    output_dir: str = "out"
    frame_rate: float = 60.0
    grid_resolution: int = 1024
    apply_filter: bool = True
    run_physics: bool = True
    strict: bool = False
    settings: QPSettings = field(default_factory=QPSettings)
    gains: PDGains = field(default_factory=PDGains)
    filter_params: FilterParams = field(default_factory=FilterParams)

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    def validate_paths(self) -> None:
        for name in ("motion_path", "mesh_path", "gt_motion_path", "camera_trajectory_path",
                     "contacts_path", "model_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name}: file not found: {value}")
        if self.settings.use_height_map and self.mesh_path is None:
            raise ConfigError("mesh_path is required when settings.use_height_map is true")


def config_from_dict(doc: dict) -> RunConfig:
    settings = QPSettings(**doc.get("settings", {}))
    gains = PDGains(**doc.get("gains", {}))
    filter_params = FilterParams(**doc.get("filter", {}))
    known = {
        k: doc[k]
        for k in (
            "motion_path",
            "mesh_path",
            "gt_motion_path",
            "camera_trajectory_path",
            "contacts_path",
            "model_path",
            "output_dir",
            "frame_rate",
            "grid_resolution",
            "apply_filter",
            "run_physics",
            "strict",
        )
        if k in doc
    }
    return RunConfig(settings=settings, gains=gains, filter_params=filter_params, **known)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        doc = json.load(fh)
    return config_from_dict(doc)


def apply_ablation(settings: QPSettings, name: Optional[str]) -> QPSettings:
    if not name:
        return settings
    if name not in ABLATION_PRESETS:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(ABLATION_PRESETS)}")
    out = QPSettings(**{**asdict_settings(settings), **ABLATION_PRESETS[name]})
    return out


def asdict_settings(settings: QPSettings) -> dict:
    return {
        "friction_mu": settings.friction_mu,
        "cone_facets": settings.cone_facets,
        "solver_tol": settings.solver_tol,
        "max_iter": settings.max_iter,
        "reg_weight": settings.reg_weight,
        "angle_weight": settings.angle_weight,
        "point_weight": settings.point_weight,
        "use_angle_pd": settings.use_angle_pd,
        "use_position_pd": settings.use_position_pd,
        "use_height_map": settings.use_height_map,
        "use_root_supervision": settings.use_root_supervision,
    }


def convert_camera_frame(seq: MotionSequence, camera: Trajectory) -> MotionSequence:
    """Re-express per-frame root poses from camera frame to world frame."""
    if len(camera) < len(seq):
        raise ConfigError(
            f"camera trajectory has {len(camera)} frames, motion has {len(seq)}"
        )
    out = seq.copy()
    from .frames import CameraFramePose

    for t in range(len(seq)):
        pose = camera_to_world(
            CameraFramePose(seq.root_rot[t], seq.root_trans[t]),
            camera.rotations[t],
            camera.translations[t],
        )
        out.root_rot[t] = pose.global_orientation
        out.root_trans[t] = pose.root_translation
    out.joint_positions = None
    return out


def filter_motion(seq: MotionSequence, params: FilterParams) -> MotionSequence:
    """One-Euro filter over root pose and joint angles, channel-wise.

    The rotation channels are unwrapped to a continuous exponential-coordinate
    series first; filtering raw per-frame logs would smear 2-pi branch flips
    into large transients.
    """
    n = len(seq)
    q = np.empty((n, NV))
    q[0] = seq.generalized_position(0)
    for t in range(1, n):
        q[t] = seq.generalized_position(t, previous=q[t - 1])
    smoothed = one_euro_filter(q, params)
    return MotionSequence(
        frame_rate=seq.frame_rate,
        root_trans=smoothed[:, 0:3],
        root_rot=np.array([exp_so3(v) for v in smoothed[:, 3:6]]),
        joint_angles=smoothed[:, 6:].reshape(n, 23, 3),
        joint_positions=None,
        contacts=seq.contacts,
    )


def save_forces(solutions: List[FrameSolution], path: str | Path) -> None:
    """Line-delimited JSON: per frame contact ids, force vectors, torques."""
    with open(path, "w") as fh:
        header = {"schema": "physmotion.forces/1", "frames": len(solutions)}
        fh.write(json.dumps(header) + "\n")
        for t, sol in enumerate(solutions):
            rec = {
                "frame": t,
                "contacts": [
                    {"name": name, "force_xyz": [float(v) for v in force]}
                    for name, force in zip(sol.contact_names, sol.contact_forces)
                ],
                "tau": [float(v) for v in sol.tau],
                "degraded": bool(sol.degraded),
            }
            fh.write(json.dumps(rec) + "\n")


@dataclass
class PipelineResult:
    refined: MotionSequence
    solutions: List[FrameSolution]
    report: Optional[MetricReport]
    degraded_frames: List[int]
    outputs: Dict[str, str]


def run_pipeline(
    config: RunConfig,
    ablation: Optional[str] = None,
    model: Optional[HumanoidModel] = None,
) -> PipelineResult:
    """Execute the full pipeline and write outputs under config.output_dir."""
    config.validate_paths()
    settings = apply_ablation(config.settings, ablation)
    model = model or (load_model(config.model_path) if config.model_path else default_model())

    log.info("loading motion from %s", config.motion_path)
    seq = load_motion(config.motion_path)

    if config.contacts_path:
        seq.contacts = load_contacts_csv(config.contacts_path)
        if len(seq.contacts) != len(seq):
            raise ConfigError("contact labels length differs from motion length")

    if config.camera_trajectory_path:
        log.info("converting camera-frame poses to world frame")
        camera = load_trajectory(config.camera_trajectory_path)
        seq = convert_camera_frame(seq, camera)

    if config.apply_filter:
        log.info(
            "filtering (min_cutoff=%g, beta=%g)",
            config.filter_params.min_cutoff,
            config.filter_params.beta,
        )
        params = FilterParams(
            min_cutoff=config.filter_params.min_cutoff,
            beta=config.filter_params.beta,
            sample_rate=seq.frame_rate,
        )
        seq = filter_motion(seq, params)

    hmap: Optional[HeightMap] = None
    if config.mesh_path:
        log.info("building height map from %s", config.mesh_path)
        mesh = load_obj(config.mesh_path)
        hmap = build_height_map(mesh, (config.grid_resolution, config.grid_resolution))

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: Dict[str, str] = {}

    if config.run_physics:
        log.info("refining %d frames", len(seq))
        refined, solutions = refine_sequence(model, seq, hmap, settings, gains=config.gains)
    else:
        refined = seq.with_joint_positions(model)
        solutions = []

    degraded = [t for t, s in enumerate(solutions) if s.degraded]
    if degraded:
        log.warning("%d degraded frames: %s", len(degraded), degraded[:10])

    refined_path = out_dir / "refined_motion.jsonl"
    save_motion(refined, refined_path)
    outputs["refined_motion"] = str(refined_path)

    if solutions:
        forces_path = out_dir / "forces.jsonl"
        save_forces(solutions, forces_path)
        outputs["forces"] = str(forces_path)

    if hmap is not None:
        hm_path = out_dir / "height_map.hmap"
        save_height_map(hmap, hm_path)
        outputs["height_map"] = str(hm_path)

    report: Optional[MetricReport] = None
    gt = load_motion(config.gt_motion_path) if config.gt_motion_path else None
    if gt is not None and gt.joint_positions is None:
        gt = gt.with_joint_positions(model)
    if gt is not None or hmap is not None:
        report = evaluate(refined, gt, hmap, refined.contacts)
        report_path = out_dir / "report.json"
        with open(report_path, "w") as fh:
            fh.write(report.to_json() + "\n")
        outputs["report"] = str(report_path)

    return PipelineResult(
        refined=refined,
        solutions=solutions,
        report=report,
        degraded_frames=degraded,
        outputs=outputs,
    )
