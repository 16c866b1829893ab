"""Command-line interface.

Subcommands: calibrate, heightmap, refine, evaluate, synth, pipeline.
Exit codes: 0 success, 1 degraded frames under --strict, 2 configuration
error, 3 solver failure. Log level comes from PHYSMOTION_LOG (default INFO).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, PhysmotionError, SolverError
from .frames import RigidTransform, hand_eye_calibrate
from .humanoid import default_model
from .metrics import evaluate
from .motion import load_motion, save_motion
from .pipeline import RunConfig, config_from_dict, run_pipeline
from .rotations import matrix_to_quat, quat_to_matrix
from .scene import build_height_map, load_obj, save_contacts_csv, save_height_map, save_obj
from .synth import SyntheticScenario, generate_scenario

EXIT_OK = 0
EXIT_DEGRADED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _setup_logging() -> None:
    level = os.environ.get("PHYSMOTION_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(message)s")


def _load_transform(path: str) -> RigidTransform:
    with open(path) as fh:
        doc = json.load(fh)
    return RigidTransform(
        quat_to_matrix(np.asarray(doc["rotation_quat_wxyz"], dtype=float)),
        np.asarray(doc["translation_xyz"], dtype=float),
    )


def _dump_transform(t: RigidTransform, path: str) -> None:
    doc = {
        "rotation_quat_wxyz": [float(v) for v in matrix_to_quat(t.rotation)],
        "translation_xyz": [float(v) for v in t.translation],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@click.group()
def main() -> None:
    """Scene-aware physics-based refinement of human motion estimates."""
    _setup_logging()


@main.command()
@click.option("--t-eh", "t_eh", required=True, type=click.Path(exists=True), help="external camera -> head marker transform (JSON)")
@click.option("--t-ef", "t_ef", required=True, type=click.Path(exists=True), help="external camera -> floor marker transform (JSON)")
@click.option("--t-mf", "t_mf", required=True, type=click.Path(exists=True), help="moving camera -> floor marker transform (JSON)")
@click.option("--out", "-o", default="hand_eye.json", type=click.Path(), show_default=True)
def calibrate(t_eh: str, t_ef: str, t_mf: str, out: str) -> None:
    """Head-marker to moving-camera transform from three measured transforms."""
    result = hand_eye_calibrate(_load_transform(t_eh), _load_transform(t_ef), _load_transform(t_mf))
    _dump_transform(result, out)
    click.echo(f"wrote {out}")


@main.command()
@click.argument("mesh", type=click.Path(exists=True))
@click.option("--out", "-o", default="scene.hmap", type=click.Path(), show_default=True)
@click.option("--resolution", default=1024, show_default=True, help="grid cells per axis")
def heightmap(mesh: str, out: str, resolution: int) -> None:
    """Build a height map from a Wavefront OBJ scene mesh."""
    hm = build_height_map(load_obj(mesh), (resolution, resolution))
    save_height_map(hm, out)
    click.echo(f"wrote {out} ({resolution}x{resolution}, cell {hm.cell_size:.4f} m)")


@main.command()
@click.option("--motion", required=True, type=click.Path(exists=True))
@click.option("--mesh", type=click.Path(exists=True))
@click.option("--contacts", type=click.Path(exists=True))
@click.option("--camera", type=click.Path(exists=True), help="camera trajectory for world-frame conversion")
@click.option("--out", "-o", "out_dir", default="out", type=click.Path(), show_default=True)
@click.option("--no-filter", is_flag=True, help="skip the One-Euro filtering stage")
@click.option("--friction-mu", type=float, default=None, help="override the friction coefficient")
@click.option("--reg-weight", type=float, default=None, help="override the force/torque regularizer weight")
@click.option("--solver-tol", type=float, default=None, help="override the QP tolerance")
@click.option("--ablation", type=click.Choice(["only-etheta", "only-er", "flat-no-root"]))
@click.option("--strict", is_flag=True, help="exit 1 if any frame was solved degraded")
def refine(motion: str, mesh: str, contacts: str, camera: str, out_dir: str, no_filter: bool,
           friction_mu: float, reg_weight: float, solver_tol: float, ablation: str, strict: bool) -> None:
    """Physics-refine a motion file against a scene mesh."""
    config = RunConfig(
        motion_path=motion,
        mesh_path=mesh,
        contacts_path=contacts,
        camera_trajectory_path=camera,
        output_dir=out_dir,
        apply_filter=not no_filter,
        strict=strict,
    )
    if mesh is None:
        config.settings.use_height_map = False
    if friction_mu is not None:
        config.settings.friction_mu = friction_mu
    if reg_weight is not None:
        config.settings.reg_weight = reg_weight
    if solver_tol is not None:
        config.settings.solver_tol = solver_tol
    _run(config, ablation)


@main.command(name="evaluate")
@click.option("--pred", required=True, type=click.Path(exists=True), help="predicted motion file")
@click.option("--gt", required=True, type=click.Path(exists=True), help="ground-truth motion file")
@click.option("--mesh", type=click.Path(exists=True), help="scene mesh for plausibility metrics")
@click.option("--resolution", default=256, show_default=True)
@click.option("--out", "-o", type=click.Path(), help="also write the report as JSON")
def evaluate_cmd(pred: str, gt: str, mesh: str, resolution: int, out: str) -> None:
    """Metric report for a prediction against ground truth."""
    model = default_model()
    pred_seq = load_motion(pred)
    gt_seq = load_motion(gt)
    if pred_seq.joint_positions is None:
        pred_seq = pred_seq.with_joint_positions(model)
    if gt_seq.joint_positions is None:
        gt_seq = gt_seq.with_joint_positions(model)
    hm = build_height_map(load_obj(mesh), (resolution, resolution)) if mesh else None
    report = evaluate(pred_seq, gt_seq, hm, pred_seq.contacts)
    click.echo(report.table())
    if out:
        with open(out, "w") as fh:
            fh.write(report.to_json() + "\n")
        click.echo(f"wrote {out}")


@main.command()
@click.option("--scene", default="flat", type=click.Choice(["flat", "ramp", "step"]), show_default=True)
@click.option("--motion", default="walk", type=click.Choice(["stand", "walk", "squat", "step-climb"]), show_default=True)
@click.option("--noise-sigma", default=0.0, show_default=True, help="per-joint angle noise (rad)")
@click.option("--drift-rate", default=0.0, show_default=True, help="root drift (m/s)")
@click.option("--duration", default=4.0, show_default=True, help="seconds")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "-o", "out_dir", default="scenario", type=click.Path(), show_default=True)
def synth(scene: str, motion: str, noise_sigma: float, drift_rate: float, duration: float, seed: int, out_dir: str) -> None:
    """Generate a synthetic scenario: noisy and ground-truth motion, mesh, labels."""
    scenario = SyntheticScenario(
        scene=scene,
        motion=motion,
        noise_sigma=noise_sigma,
        drift_rate=drift_rate,
        duration=duration,
        seed=seed,
    )
    bundle = generate_scenario(scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_motion(bundle.noisy, out / "noisy_motion.jsonl")
    save_motion(bundle.ground_truth, out / "gt_motion.jsonl")
    save_obj(bundle.mesh, out / "scene.obj")
    save_contacts_csv(bundle.contacts, out / "contacts.csv")
    click.echo(f"wrote scenario to {out} ({len(bundle.noisy)} frames)")


@main.command(name="pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ablation", type=click.Choice(["only-etheta", "only-er", "flat-no-root"]))
@click.option("--seed", default=None, type=int, help="seed override for configs with a scenario block")
@click.option("--strict", is_flag=True)
@click.option("--out", "out_dir", default=None, type=click.Path(), help="output directory override")
def pipeline_cmd(config_path: str, ablation: str, seed: int, strict: bool, out_dir: str) -> None:
    """Run the full pipeline from a JSON config file.

    A config may carry a "scenario" block instead of input paths; the
    scenario is generated first (deterministic in the seed) and its files are
    placed under the output directory.
    """
    try:
        with open(config_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    try:
        if "scenario" in doc:
            scen_doc = dict(doc.pop("scenario"))
            if seed is not None:
                scen_doc["seed"] = seed
            scenario = SyntheticScenario(**scen_doc)
            target = Path(out_dir or doc.get("output_dir", "out"))
            inputs = target / "inputs"
            inputs.mkdir(parents=True, exist_ok=True)
            bundle = generate_scenario(scenario)
            save_motion(bundle.noisy, inputs / "noisy_motion.jsonl")
            save_motion(bundle.ground_truth, inputs / "gt_motion.jsonl")
            save_obj(bundle.mesh, inputs / "scene.obj")
            save_contacts_csv(bundle.contacts, inputs / "contacts.csv")
            doc.setdefault("motion_path", str(inputs / "noisy_motion.jsonl"))
            doc.setdefault("gt_motion_path", str(inputs / "gt_motion.jsonl"))
            doc.setdefault("mesh_path", str(inputs / "scene.obj"))
            doc.setdefault("contacts_path", str(inputs / "contacts.csv"))
        config = config_from_dict(doc)
    except (PhysmotionError, TypeError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    if out_dir:
        config.output_dir = out_dir
    config.strict = strict or config.strict
    _run(config, ablation)


def _run(config: RunConfig, ablation: str | None) -> None:
    try:
        result = run_pipeline(config, ablation=ablation)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SolverError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)

    for name, path in result.outputs.items():
        click.echo(f"{name}: {path}")
    if result.report is not None:
        click.echo(result.report.table())
    if result.degraded_frames:
        click.echo(f"degraded frames: {len(result.degraded_frames)}")
        if config.strict:
            sys.exit(EXIT_DEGRADED)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
