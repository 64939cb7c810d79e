import json

import pytest

from volpose import estimate, io
from volpose.cli import dispatch
from volpose.estimate import PersonEstimate


def _run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One synth -> scan -> estimate pipeline shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert _run("synth", "--frames", 2, "--persons", 2, "--seed", 7, "--out", root / "b") == 0
    assert _run("scan", root / "b", "--out", root / "c") == 0
    assert _run("estimate", root / "b", "--clouds", root / "c", "--out", root / "e") == 0
    return root


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes()
            for p in sorted(path.rglob("*")) if p.is_file()}


class TestSynth:
    def test_bundle_layout(self, run):
        b = run / "b"
        assert {"scene.json", "calibration.json", "manifest.json"} <= {p.name for p in b.iterdir()}
        frame = b / "frame_000000"
        assert (frame / "poses.json").exists()
        assert len(list(frame.glob("depth_*.f32"))) == 5
        assert len(list(frame.glob("heatmap_*_p*.f32"))) == 10

    def test_manifest(self, run):
        m = io.read_json(run / "b" / "manifest.json")
        assert m["command"] == "synth" and m["seed"] == 7
        assert m["config"]["preset"] == "panoptic" and "version" in m

    def test_deterministic(self, run, tmp_path, monkeypatch):
        # byte-identical bundles from the same relative paths
        for name in ("x", "y"):
            monkeypatch.chdir(tmp_path)
            (tmp_path / name).mkdir()
            monkeypatch.chdir(tmp_path / name)
            assert _run("synth", "--frames", 2, "--persons", 2, "--seed", 7, "--out", "b") == 0
        assert _tree(tmp_path / "x") == _tree(tmp_path / "y")

    def test_jobs_do_not_change_output(self, run, tmp_path):
        assert _run("synth", "--frames", 2, "--persons", 2, "--seed", 7, "--jobs", 2,
                    "--out", tmp_path / "b") == 0
        a, b = _tree(run / "b"), _tree(tmp_path / "b")
        a.pop("manifest.json")
        b.pop("manifest.json")
        assert a == b


class TestPipeline:
    def test_scan_outputs(self, run):
        frame = run / "c" / "frame_000001"
        assert len(list(frame.glob("cloud_*.bin"))) == 5 and (frame / "cloud.ply").exists()
        stats = io.read_json(run / "c" / "scan_stats.json")
        assert len(stats["frames"]) == 2

    def test_estimate_then_eval(self, run):
        assert _run("eval-pose", run / "b", run / "e" / "estimates.json",
                    "--out", run / "v") == 0
        summary = io.read_json(run / "v" / "summary.json")
        assert summary["persons"] == 4
        assert summary["mean_mpjpe_mm"] <= 15.6
        rows = io.read_csv(run / "v" / "eval.csv")
        assert len(rows) == 4 and set(rows[0]) >= {"mpjpe_mm", "pa_mpjpe_mm"}
        assert (run / "v" / "mpjpe_hist.png").read_bytes()[:4] == b"\x89PNG"

    def test_estimate_without_clouds(self, run):
        assert _run("estimate", run / "b", "--resolution", 32, "--out", run / "e2") == 0
        m = io.read_json(run / "e2" / "manifest.json")
        assert m["fuse_params"]["gate"] == 0.0

    def test_triangulate(self, run):
        assert _run("triangulate", run / "b", "--out", run / "t") == 0
        assert _run("eval-pose", run / "b", run / "t" / "estimates.json", "--out", run / "tv") == 0
        assert io.read_json(run / "tv" / "summary.json")["mean_mpjpe_mm"] < 1.0

    def test_refine_and_loss(self, run):
        est = run / "e" / "estimates.json"
        assert _run("refine", run / "b", est, "--iterations", 3, "--out", run / "r") == 0
        for _, ests in io.read_estimates(run / "r" / "estimates.json"):
            for e in ests:
                assert e["objective"]["final"] <= e["objective"]["initial"]
        assert _run("loss", run / "b", est, "--pseudo3d", est, "--out", run / "l") == 0
        rows = io.read_json(run / "l" / "losses.json")
        assert len(rows) == 4 and all(r["indicator_active"] for r in rows)

    def test_eval_det(self, run):
        assert _run("eval-det", run / "b", "--estimates", run / "e" / "estimates.json",
                    "--out", run / "d") == 0
        s = io.read_json(run / "d" / "summary.json")
        assert set(s["ap"]) == {"AP50", "AP70"} and s["ap"]["AP50"] == 1.0
        assert s["interpolation"] == "all-point"


class TestFilter:
    def test_survivors_match_library(self, tmp_path, standing_pose):
        batch = [PersonEstimate(standing_pose, u, i) for i, u in enumerate([4.2, 6.0, 7.1, 5.9])]
        io.write_estimates(tmp_path / "in.json", [(0, [e.to_json() for e in batch])])
        assert _run("filter", tmp_path / "in.json", "--lambda", 6, "--out", tmp_path / "f") == 0
        kept = io.read_estimates(tmp_path / "f" / "estimates.json")[0][1]
        expected = estimate.filter_pseudo_labels(batch, 6.0)
        assert [d["person_id"] for d in kept] == [e.person_id for e in expected] == [0, 3]
        summary = io.read_json(tmp_path / "f" / "summary.json")
        assert (summary["input"], summary["kept"]) == (4, 2)


class TestEntropyStudy:
    def test_small_run(self, tmp_path):
        assert _run("entropy-study", "--persons", 4, "--resolution", 16, "--bins", 8,
                    "--out", tmp_path / "s") == 0
        out = tmp_path / "s"
        rows = io.read_csv(out / "entropy.csv")
        assert [r["condition"] for r in rows] == ["clean", "corrupted"] * 2
        assert len(io.read_csv(out / "histogram.csv")) == 8
        summary = io.read_json(out / "summary.json")
        assert set(summary["mean_uncertainty_nats"]) == {"clean", "corrupted"}
        for png in ("entropy_hist.png", "entropy_vs_mpjpe.png"):
            assert (out / png).stat().st_size > 0


class TestExitCodes:
    def test_missing_bundle(self, tmp_path, capsys):
        assert _run("estimate", tmp_path / "nope", "--out", tmp_path / "o") == 1
        assert "error" in capsys.readouterr().err

    def test_bad_flag(self):
        assert _run("synth", "--frames", "many") == 1

    def test_unknown_command(self):
        assert _run("fly") == 1

    def test_contract_violation(self, run, tmp_path, standing_pose, capsys):
        # no joint valid: the metric refuses to score the pose
        d = PersonEstimate(standing_pose, 1.0, 0).to_json()
        d["validity"] = [False] * 17
        io.write_estimates(tmp_path / "bad.json", [(0, [d])])
        assert _run("eval-pose", run / "b", tmp_path / "bad.json", "--out", tmp_path / "o") == 2
        assert "NoValidJoints" in capsys.readouterr().err

    def test_version(self, capsys):
        assert _run("--version") == 0
        assert "0.1.0" in capsys.readouterr().out

    def test_output_root_env(self, tmp_path, monkeypatch, standing_pose):
        monkeypatch.setenv("VOLPOSE_OUTPUT_ROOT", str(tmp_path / "root"))
        io.write_estimates(tmp_path / "in.json", [(0, [PersonEstimate(standing_pose, 1.0).to_json()])])
        assert _run("filter", tmp_path / "in.json") == 0
        assert json.loads((tmp_path / "root" / "filter" / "summary.json").read_text())["kept"] == 1
