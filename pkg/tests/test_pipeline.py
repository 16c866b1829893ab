import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from physmotion.cli import main
from physmotion.errors import ConfigError
from physmotion.frames import FilterParams
from physmotion.motion import load_motion, save_motion
from physmotion.pipeline import RunConfig, filter_motion, run_pipeline
from physmotion.scene import save_contacts_csv, save_obj
from physmotion.synth import SyntheticScenario, generate_scenario


def write_scenario(tmp_path, model, **kwargs):
    scenario = SyntheticScenario(**{"scene": "flat", "motion": "stand", "duration": 1.0, "seed": 3, **kwargs})
    bundle = generate_scenario(scenario, model)
    save_motion(bundle.noisy, tmp_path / "noisy.jsonl")
    save_motion(bundle.ground_truth, tmp_path / "gt.jsonl")
    save_obj(bundle.mesh, tmp_path / "scene.obj")
    save_contacts_csv(bundle.contacts, tmp_path / "contacts.csv")
    return bundle


class TestRunConfig:
    def test_load_config_round_trip(self, tmp_path):
        from physmotion.pipeline import load_config

        doc = {
            "motion_path": "x.jsonl",
            "output_dir": "o",
            "grid_resolution": 77,
            "settings": {"friction_mu": 0.5, "use_root_supervision": False},
            "gains": {"angle_kp": 1200.0},
            "filter": {"min_cutoff": 1.5},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        config = load_config(path)
        assert config.grid_resolution == 77
        assert config.settings.friction_mu == 0.5
        assert not config.settings.use_root_supervision
        assert config.gains.angle_kp == 1200.0
        assert config.filter_params.min_cutoff == 1.5

    def test_missing_mesh_with_height_map_names_field(self, tmp_path, model):
        write_scenario(tmp_path, model)
        config = RunConfig(motion_path=str(tmp_path / "noisy.jsonl"), mesh_path=None)
        with pytest.raises(ConfigError) as err:
            config.validate_paths()
        assert "mesh_path" in str(err.value)

    def test_missing_file_reported(self, tmp_path):
        config = RunConfig(motion_path=str(tmp_path / "nope.jsonl"), mesh_path=None)
        config.settings.use_height_map = False
        with pytest.raises(ConfigError) as err:
            config.validate_paths()
        assert "nope.jsonl" in str(err.value)

    def test_bad_frame_rate(self):
        with pytest.raises(ConfigError):
            RunConfig(motion_path="x", frame_rate=0.0)


class TestRunPipeline:
    def test_stand_scenario_low_sliding(self, tmp_path, model):
        write_scenario(tmp_path, model, noise_sigma=0.0)
        config = RunConfig(
            motion_path=str(tmp_path / "noisy.jsonl"),
            gt_motion_path=str(tmp_path / "gt.jsonl"),
            mesh_path=str(tmp_path / "scene.obj"),
            contacts_path=str(tmp_path / "contacts.csv"),
            output_dir=str(tmp_path / "out"),
            grid_resolution=64,
        )
        result = run_pipeline(config, model=model)
        assert result.report is not None
        assert result.report.foot_sliding < 1.0
        assert not result.degraded_frames

    def test_penetrating_scenario_improves(self, tmp_path, model):
        bundle = write_scenario(tmp_path, model, noise_sigma=0.01, scene="flat")
        lowered = bundle.noisy.copy()
        lowered.root_trans = lowered.root_trans - np.array([0.0, 0.05, 0.0])
        lowered.joint_positions = None
        save_motion(lowered, tmp_path / "low.jsonl")
        from physmotion.metrics import penetration_stats
        from physmotion.scene import build_height_map

        hm = build_height_map(bundle.mesh, (64, 64))
        input_pct = penetration_stats(lowered.with_joint_positions(model), hm, bundle.contacts)[0]
        config = RunConfig(
            motion_path=str(tmp_path / "low.jsonl"),
            mesh_path=str(tmp_path / "scene.obj"),
            contacts_path=str(tmp_path / "contacts.csv"),
            output_dir=str(tmp_path / "out"),
            grid_resolution=64,
        )
        result = run_pipeline(config, model=model)
        refined_pct = penetration_stats(result.refined, hm, bundle.contacts)[0]
        assert refined_pct < input_pct

    def test_stage_isolation_without_physics(self, tmp_path, model):
        write_scenario(tmp_path, model, noise_sigma=0.02)
        config = RunConfig(
            motion_path=str(tmp_path / "noisy.jsonl"),
            mesh_path=str(tmp_path / "scene.obj"),
            output_dir=str(tmp_path / "out"),
            run_physics=False,
            grid_resolution=64,
        )
        result = run_pipeline(config, model=model)
        # output equals the filtered kinematic input exactly
        loaded = load_motion(tmp_path / "noisy.jsonl")
        params = FilterParams(min_cutoff=config.filter_params.min_cutoff,
                              beta=config.filter_params.beta, sample_rate=loaded.frame_rate)
        expected = filter_motion(loaded, params)
        assert np.abs(result.refined.root_trans - expected.root_trans).max() < 1e-12
        assert np.abs(result.refined.joint_angles - expected.joint_angles).max() < 1e-12

    def test_outputs_self_loadable(self, tmp_path, model):
        write_scenario(tmp_path, model)
        config = RunConfig(
            motion_path=str(tmp_path / "noisy.jsonl"),
            mesh_path=str(tmp_path / "scene.obj"),
            contacts_path=str(tmp_path / "contacts.csv"),
            output_dir=str(tmp_path / "out"),
            grid_resolution=64,
        )
        result = run_pipeline(config, model=model)
        reloaded = load_motion(result.outputs["refined_motion"])
        assert len(reloaded) == len(result.refined)
        forces_lines = Path(result.outputs["forces"]).read_text().splitlines()
        header = json.loads(forces_lines[0])
        assert header["frames"] == len(result.refined)
        rec = json.loads(forces_lines[1])
        assert set(rec) == {"frame", "contacts", "tau", "degraded"}

    def test_determinism_byte_identical(self, tmp_path, model):
        write_scenario(tmp_path, model, noise_sigma=0.02)
        outs = []
        for run in ("run1", "run2"):
            config = RunConfig(
                motion_path=str(tmp_path / "noisy.jsonl"),
                gt_motion_path=str(tmp_path / "gt.jsonl"),
                mesh_path=str(tmp_path / "scene.obj"),
                contacts_path=str(tmp_path / "contacts.csv"),
                output_dir=str(tmp_path / run),
                grid_resolution=64,
            )
            result = run_pipeline(config, model=model)
            outs.append(result.outputs)
        for key in ("refined_motion", "forces", "report"):
            h = [hashlib.sha256(Path(o[key]).read_bytes()).hexdigest() for o in outs]
            assert h[0] == h[1]


class TestCameraConversion:
    def test_camera_frame_round_trip_through_pipeline_stage(self, tmp_path, model, rng):
        from physmotion.frames import CameraFramePose, Trajectory, save_trajectory, world_to_camera
        from physmotion.pipeline import convert_camera_frame
        from physmotion.rotations import random_rotation

        bundle = write_scenario(tmp_path, model, noise_sigma=0.0)
        world = bundle.ground_truth
        n = len(world)
        cam = Trajectory(
            np.arange(n),
            np.array([random_rotation(rng) for _ in range(n)]),
            rng.normal(size=(n, 3)),
        )
        # express each world-frame root pose in the camera frame
        cam_seq = world.copy()
        for t in range(n):
            pose = world_to_camera(
                CameraFramePose(world.root_rot[t], world.root_trans[t]),
                cam.rotations[t],
                cam.translations[t],
            )
            cam_seq.root_rot[t] = pose.global_orientation
            cam_seq.root_trans[t] = pose.root_translation
        recovered = convert_camera_frame(cam_seq, cam)
        assert np.abs(recovered.root_rot - world.root_rot).max() < 1e-10
        assert np.abs(recovered.root_trans - world.root_trans).max() < 1e-10

    def test_short_camera_trajectory_rejected(self, tmp_path, model, rng):
        from physmotion.frames import Trajectory
        from physmotion.pipeline import convert_camera_frame

        bundle = write_scenario(tmp_path, model)
        cam = Trajectory(np.arange(2), np.tile(np.eye(3), (2, 1, 1)), np.zeros((2, 3)))
        with pytest.raises(ConfigError):
            convert_camera_frame(bundle.ground_truth, cam)


class TestCLI:
    def test_synth_and_pipeline_commands(self, tmp_path):
        runner = CliRunner()
        with runner.isolated_filesystem(temp_dir=tmp_path):
            r = runner.invoke(main, ["synth", "--scene", "flat", "--motion", "stand",
                                     "--duration", "0.5", "--seed", "3", "--out", "scen"])
            assert r.exit_code == 0, r.output
            cfg = {
                "motion_path": "scen/noisy_motion.jsonl",
                "gt_motion_path": "scen/gt_motion.jsonl",
                "mesh_path": "scen/scene.obj",
                "contacts_path": "scen/contacts.csv",
                "output_dir": "out",
                "grid_resolution": 64,
            }
            Path("cfg.json").write_text(json.dumps(cfg))
            r = runner.invoke(main, ["pipeline", "--config", "cfg.json"])
            assert r.exit_code == 0, r.output
            assert Path("out/refined_motion.jsonl").exists()
            assert Path("out/report.json").exists()

    def test_pipeline_config_error_exit_code(self, tmp_path):
        runner = CliRunner()
        with runner.isolated_filesystem(temp_dir=tmp_path):
            Path("cfg.json").write_text(json.dumps({"motion_path": "missing.jsonl"}))
            r = runner.invoke(main, ["pipeline", "--config", "cfg.json"])
            assert r.exit_code == 2

    def test_heightmap_command(self, tmp_path, model):
        runner = CliRunner()
        with runner.isolated_filesystem(temp_dir=tmp_path):
            write_scenario(Path("."), model)
            r = runner.invoke(main, ["heightmap", "scene.obj", "-o", "scene.hmap", "--resolution", "32"])
            assert r.exit_code == 0, r.output
            from physmotion.scene import load_height_map

            hm = load_height_map("scene.hmap")
            assert hm.resolution == (32, 32)

    def test_calibrate_command(self, tmp_path, rng):
        from physmotion.rotations import matrix_to_quat, random_rotation

        runner = CliRunner()
        with runner.isolated_filesystem(temp_dir=tmp_path):
            for name in ("eh", "ef", "mf"):
                doc = {
                    "rotation_quat_wxyz": [float(v) for v in matrix_to_quat(random_rotation(rng))],
                    "translation_xyz": [float(v) for v in rng.normal(size=3)],
                }
                Path(f"{name}.json").write_text(json.dumps(doc))
            r = runner.invoke(main, ["calibrate", "--t-eh", "eh.json", "--t-ef", "ef.json",
                                     "--t-mf", "mf.json", "-o", "he.json"])
            assert r.exit_code == 0, r.output
            doc = json.loads(Path("he.json").read_text())
            assert set(doc) == {"rotation_quat_wxyz", "translation_xyz"}

    def test_evaluate_command(self, tmp_path, model):
        runner = CliRunner()
        with runner.isolated_filesystem(temp_dir=tmp_path):
            write_scenario(Path("."), model, noise_sigma=0.02)
            r = runner.invoke(main, ["evaluate", "--pred", "noisy.jsonl", "--gt", "gt.jsonl",
                                     "--mesh", "scene.obj", "--resolution", "32", "-o", "rep.json"])
            assert r.exit_code == 0, r.output
            doc = json.loads(Path("rep.json").read_text())
            assert "mpjpe" in doc
