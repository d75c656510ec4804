import json

import numpy as np
import pytest

from panodepth import cli
from panodepth.io import read_pfm, write_json, write_pfm


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("render")
    assert cli.main(["render", "--h", "32", "--steps", "2", "--seed", "1", "--out", str(out)]) == 0
    return out


class TestRender:
    def test_counts_and_manifest(self, tmp_path, capsys):
        code, out, _ = run(capsys, "render", "--h", 16, "--steps", 3, "--seed", 7, "--out", tmp_path)
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["depth_000.pfm", "depth_001.pfm", "depth_002.pfm", "frame_000.png",
                         "frame_001.png", "frame_002.png", "motions.json"]
        assert len(out.strip().splitlines()) == 7

    def test_identical_bytes(self, tmp_path, capsys):
        for sub in ("a", "b"):
            run(capsys, "render", "--h", 16, "--steps", 2, "--seed", 7, "--out", tmp_path / sub)
        for p in (tmp_path / "a").iterdir():
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_odd_height(self, tmp_path, capsys):
        code, _, err = run(capsys, "render", "--h", 5, "--out", tmp_path)
        assert code == 2 and "--h" in err

    def test_env_output_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
        assert run(capsys, "render", "--h", 8, "--steps", 1)[0] == 0
        assert (tmp_path / "env" / "frame_000.png").exists()


class TestWarp:
    def test_zero_motion_byte_equal(self, dataset, tmp_path, capsys):
        write_json(tmp_path / "zero.json", {"dv": [0, 0, 0], "dr_x": 0})
        code, *_ = run(capsys, "warp", "--image", dataset / "frame_000.png", "--depth", dataset / "depth_000.pfm",
                       "--motion", tmp_path / "zero.json", "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "synth.png").read_bytes() == (dataset / "frame_000.png").read_bytes()

    def test_rendered_pair_rmse(self, dataset, tmp_path, capsys):
        code, out, _ = run(capsys, "warp", "--image", dataset / "frame_000.png", "--depth", dataset / "depth_000.pfm",
                           "--motion", dataset / "motions.json", "--reference", dataset / "frame_001.png",
                           "--out", tmp_path)
        assert code == 0
        rmse = float(next(line for line in out.splitlines() if line.startswith("rmse=")).split("=")[1])
        assert rmse < 0.02
        assert (tmp_path / "coverage.png").exists() and (tmp_path / "residual.png").exists()

    def test_missing_depth(self, dataset, tmp_path, capsys):
        missing = tmp_path / "nope.pfm"
        code, _, err = run(capsys, "warp", "--image", dataset / "frame_000.png", "--depth", missing,
                           "--motion", dataset / "motions.json", "--out", tmp_path)
        assert code == 3 and str(missing) in err

    def test_bad_motion_index(self, dataset, tmp_path, capsys):
        code, *_ = run(capsys, "warp", "--image", dataset / "frame_000.png", "--depth", dataset / "depth_000.pfm",
                       "--motion", dataset / "motions.json", "--index", 4, "--out", tmp_path)
        assert code == 2


class TestOptimize:
    def frames(self, dataset):
        return ["--image", dataset / "frame_000.png", "--image-prime", dataset / "frame_001.png"]

    def test_outputs(self, dataset, tmp_path, capsys):
        code, out, _ = run(capsys, "optimize", *self.frames(dataset), "--gt", dataset / "depth_000.pfm",
                           "--iterations", 30, "--out", tmp_path)
        assert code == 0
        for name in ("depth.pfm", "depth_prime.pfm", "motion.json", "trace.jsonl", "depth_vis.png", "summary.json"):
            assert (tmp_path / name).exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["iterations"] == 30 and 0 <= summary["abs_rel"] < 1
        assert len((tmp_path / "trace.jsonl").read_text().splitlines()) == 30
        assert read_pfm(tmp_path / "depth.pfm").shape == (32, 64)
        motion = json.loads((tmp_path / "motion.json").read_text())
        assert set(motion["forward"]) == {"dv", "dr_x"}

    def test_supervised_without_gt(self, dataset, tmp_path, capsys):
        code, *_ = run(capsys, "optimize", *self.frames(dataset), "--flow", "supervised-only", "--out", tmp_path)
        assert code == 2

    def test_joint_random_repeatable(self, dataset, tmp_path, capsys):
        args = [*self.frames(dataset), "--gt", dataset / "depth_000.pfm", "--flow", "joint-random",
                "--seed", 5, "--iterations", 8]
        run(capsys, "optimize", *args, "--out", tmp_path / "a")
        run(capsys, "optimize", *args, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()

    @pytest.mark.parametrize("config", [{"bogus": 1}, {"lambda_I": -1.0}, {"lr": 0}, {"betas": [1.5, 0.9]}])
    def test_config_rejected(self, dataset, tmp_path, capsys, config):
        write_json(tmp_path / "c.json", config)
        code, *_ = run(capsys, "optimize", *self.frames(dataset), "--config", tmp_path / "c.json", "--out", tmp_path)
        assert code == 2

    def test_config_applied(self, dataset, tmp_path, capsys):
        write_json(tmp_path / "c.json", {"iterations": 4, "lambda_D": 0.0, "crop_deg": 30})
        assert run(capsys, "optimize", *self.frames(dataset), "--config", tmp_path / "c.json",
                   "--out", tmp_path)[0] == 0
        assert len((tmp_path / "trace.jsonl").read_text().splitlines()) == 4

    def test_divergence_exit_code(self, dataset, tmp_path, capsys):
        code, *_ = run(capsys, "optimize", *self.frames(dataset), "--lr", 1000, "--iterations", 20,
                       "--out", tmp_path)
        assert code == 4


class TestGradcheck:
    def test_single_op(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--op", "bilinear_splat", "--instances", 3)
        assert code == 0
        assert out.strip().splitlines() == [out.strip()] and out.startswith("bilinear_splat:")

    def test_injected_fault(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--op", "mul", "--instances", 2, "--inject-fault", "mul")
        assert code == 4 and "FAIL" in out


class TestEval:
    @pytest.fixture
    def maps(self, tmp_path):
        gt = np.random.default_rng(0).uniform(1, 2, (16, 32)).astype(np.float32)
        gt[0, :5] = 0.0
        write_pfm(tmp_path / "gt.pfm", gt)
        return tmp_path, gt

    def test_identity(self, maps, capsys):
        d, _ = maps
        code, out, _ = run(capsys, "eval", "--pred", d / "gt.pfm", "--gt", d / "gt.pfm", "--json", d / "m.json")
        assert code == 0 and "abs_rel=0" in out.splitlines()
        assert json.loads((d / "m.json").read_text())["delta1"] == 1.0

    def test_affine_invariant(self, maps, capsys):
        d, gt = maps
        rng = np.random.default_rng(1)
        pred = np.where(gt > 0, gt, 1.5).astype(np.float32) + rng.uniform(-0.2, 0.2, gt.shape).astype(np.float32)
        pred = np.clip(pred, 1.0, np.nextafter(np.float32(2), np.float32(0)))
        write_pfm(d / "p.pfm", pred)
        # 2x - 1 is exact in float32 on [1, 2)
        write_pfm(d / "q.pfm", 2 * pred - 1)
        _, a, _ = run(capsys, "eval", "--pred", d / "p.pfm", "--gt", d / "gt.pfm")
        _, b, _ = run(capsys, "eval", "--pred", d / "q.pfm", "--gt", d / "gt.pfm")
        va = [float(line.split("=")[1]) for line in a.splitlines()]
        vb = [float(line.split("=")[1]) for line in b.splitlines()]
        np.testing.assert_allclose(va, vb, atol=1e-9)

    def test_shape_mismatch(self, maps, capsys):
        d, _ = maps
        write_pfm(d / "small.pfm", np.ones((8, 16)))
        code, *_ = run(capsys, "eval", "--pred", d / "small.pfm", "--gt", d / "gt.pfm")
        assert code == 2
