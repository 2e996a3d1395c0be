# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for the command-line interface."""

import pytest

from semantic_voxels.cli import build_parser, main
from semantic_voxels.data.formats import read_checkpoint, read_named_arrays, read_painted
from semantic_voxels.data.scene import read_scene

DESK = ["--preset", "desk", "--log-level", "WARNING"]
NEAR = ["--x-range", "6", "12", "--y-range", "-3", "3"]


def _synth(directory, *extra) -> None:
    assert main([*DESK, "synth", "--out", str(directory), *NEAR, *extra]) == 0


class TestParser:
    """Test argument parsing."""

    def test_subcommand_required(self):
        """Test that a bare invocation is rejected."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_eval_mode_choices(self):
        """Test that only 11 or 40 recall points are accepted."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["eval", "--dets", "d", "--gts", "g", "--mode", "20"])


class TestCommands:
    """Test end-to-end commands on the desk preset."""

    def test_synth_then_forward(self, tmp_path, capsys):
        """Test that detections are written for a synthetic scene."""
        _synth(tmp_path / "scene", "--seed", "3")
        out = tmp_path / "dets.txt"

        assert main([*DESK, "forward", "--scene", str(tmp_path / "scene"), "--out", str(out)]) == 0
        assert out.exists()
        assert "detections for 1 frame(s)" in capsys.readouterr().out

    def test_forward_is_deterministic(self, tmp_path):
        """Test that two runs write identical detection files."""
        _synth(tmp_path / "scene", "--seed", "4")
        outputs = []
        for name in ("a.txt", "b.txt"):
            out = tmp_path / name
            main([*DESK, "forward", "--scene", str(tmp_path / "scene"), "--out", str(out)])
            outputs.append(out.read_text())
        assert outputs[0] == outputs[1]

    def test_forward_batch_directory(self, tmp_path):
        """Test one detection file per scene of a batch."""
        _synth(tmp_path / "scenes", "--count", "2", "--seed", "8")
        out = tmp_path / "dets"

        cmd = [*DESK, "--threads", "2", "forward", "--scene", str(tmp_path / "scenes")]
        assert main([*cmd, "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["000008.txt", "000009.txt"]

    def test_eval_of_ground_truth(self, tmp_path, capsys):
        """Test that labels scored against themselves reach 100 AP."""
        scene = tmp_path / "scene"
        _synth(scene, "--seed", "6", "--peds", "2")
        report = tmp_path / "report.txt"
        plot = tmp_path / "pr.png"

        args = ["eval", "--dets", str(scene), "--gts", str(scene), "--mode", "11"]
        assert main([*DESK, *args, "--out", str(report), "--plot", str(plot)]) == 0

        text = report.read_text()
        assert "num_points=11" in text
        assert "ap_bev_hard=100.000000" in text
        assert "ap_3d_hard=100.000000" in text
        assert plot.stat().st_size > 0
        assert "hard" in capsys.readouterr().out

    def test_paint_and_encode(self, tmp_path):
        """Test the painted cloud and the named feature maps of a scene."""
        _synth(tmp_path / "scene", "--seed", "2")
        scene = read_scene(tmp_path / "scene")

        painted = tmp_path / "cloud.svpc"
        assert main([*DESK, "paint", "--scene", str(tmp_path / "scene"), "--out", str(painted)]) == 0
        assert len(read_painted(painted)) == len(scene.cloud)

        maps = tmp_path / "maps.svck"
        cmd = [*DESK, "encode", "--scene", str(tmp_path / "scene"), "--scheme", "late"]
        assert main([*cmd, "--out", str(maps)]) == 0
        arrays = read_named_arrays(maps)
        assert list(arrays) == ["geometric", "semantic", "head_input"]
        assert arrays["geometric"].shape[1:] == (96, 96)

    def test_init_weights_then_forward(self, tmp_path, desk_config):
        """Test that a written checkpoint drives the forward pass."""
        weights = tmp_path / "middle.svck"
        cmd = [*DESK, "init-weights", "--scheme", "middle", "--seed", "2"]
        assert main([*cmd, "--out", str(weights)]) == 0
        assert read_checkpoint(weights, desk_config).scheme == "middle"

        _synth(tmp_path / "scene", "--seed", "1")
        forward = ["forward", "--scene", str(tmp_path / "scene"), "--weights", str(weights)]
        assert main([*DESK, *forward, "--out", str(tmp_path / "d.txt")]) == 0

    def test_checkpoint_scheme_conflict(self, tmp_path, capsys):
        """Test that --scheme must agree with the checkpoint."""
        weights = tmp_path / "early.svck"
        main([*DESK, "init-weights", "--scheme", "early", "--out", str(weights)])
        _synth(tmp_path / "scene")

        forward = ["forward", "--scene", str(tmp_path / "scene"), "--weights", str(weights)]
        code = main([*DESK, *forward, "--scheme", "late", "--out", str(tmp_path / "d.txt")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_scene(self, tmp_path, capsys):
        """Test that a missing input exits with status 1."""
        code = main([*DESK, "forward", "--scene", str(tmp_path / "absent"), "--out", "x.txt"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_corrupt_scan(self, tmp_path):
        """Test that a truncated velodyne file exits with status 1."""
        _synth(tmp_path / "scene")
        scan = tmp_path / "scene" / "velodyne.bin"
        scan.write_bytes(scan.read_bytes()[:-3])
        out = tmp_path / "d.txt"
        assert main([*DESK, "forward", "--scene", str(tmp_path / "scene"), "--out", str(out)]) == 1

    def test_malformed_config(self, tmp_path, capsys):
        """Test that a configuration file that is not JSON exits with status 1."""
        config = tmp_path / "broken.json"
        config.write_text("{ grid: ")

        code = main(["--config", str(config), "synth", "--out", str(tmp_path / "scene")])

        assert code == 1
        assert "error:" in capsys.readouterr().err
        assert not (tmp_path / "scene").exists()

    def test_gradcheck(self, capsys):
        """Test that the gradient check passes."""
        assert main([*DESK, "gradcheck", "--scenes", "10"]) == 0
        assert "PASSED" in capsys.readouterr().out

    @pytest.mark.slow
    def test_compare(self, tmp_path, capsys):
        """Test a four-scheme comparison over synthetic scenes."""
        assert main([*DESK, "compare", "--count", "2", *NEAR]) == 0
        out = capsys.readouterr().out
        for scheme in ("early", "middle", "late", "none"):
            assert scheme in out
