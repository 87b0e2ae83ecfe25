import json

import numpy as np
import pytest

from depthfusion import data as D
from depthfusion import geometry as G
from depthfusion.cli import depth_colormap, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset plus a 2-epoch fusion checkpoint, shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["gen-data", "--count", "4", "--out", str(data),
                 "--seed", "1", "--width", "32", "--height", "32"]) == 0
    assert main(["train", "--train-dir", str(data), "--out", str(run),
                 "--epochs", "2", "--width", "32", "--height", "32",
                 "--fusion", "concat", "--seed", "0"]) == 0
    return {"root": root, "data": data,
            "ckpt": run / "last.ckpt"}


def test_gen_data_writes_samples(workspace):
    ids = D.list_sample_ids(workspace["data"])
    assert len(ids) == 4
    s = D.load_sample(workspace["data"], ids[0])
    assert s.rgb.shape == (32, 32, 3)


def test_predict_outputs_and_determinism(workspace):
    data, root = workspace["data"], workspace["root"]
    out1, out2 = root / "p1.pgm", root / "p2.pgm"
    args = ["predict", "--checkpoint", str(workspace["ckpt"]),
            "--rgb", str(data / "000000_rgb.ppm"),
            "--sparse", str(data / "000000_sparse.pgm")]
    assert main(args + ["--out", str(out1), "--vis", str(root / "v.ppm")]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    depth = D.load_depth_pgm(out1)
    assert depth.shape == (32, 32) and depth.min() > 0
    vis = D.load_ppm(root / "v.ppm")
    assert vis.shape == (32, 32, 3)


def test_predict_fusion_requires_sparse(workspace, capsys):
    code = main(["predict", "--checkpoint", str(workspace["ckpt"]),
                 "--rgb", str(workspace["data"] / "000000_rgb.ppm"),
                 "--out", str(workspace["root"] / "x.pgm")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["code"] == 1 and "sparse" in err["error"]


def test_eval_divisor_flag_and_outputs(workspace):
    root, data = workspace["root"], workspace["data"]
    out_gt, out_pred = root / "eval_gt", root / "eval_pred"
    assert main(["eval", "--checkpoint", str(workspace["ckpt"]),
                 "--split-dir", str(data), "--out", str(out_gt)]) == 0
    assert main(["eval", "--checkpoint", str(workspace["ckpt"]),
                 "--split-dir", str(data), "--out", str(out_pred),
                 "--ard-divisor", "pred"]) == 0
    agg_gt = json.loads((out_gt / "aggregate.json").read_text())
    agg_pred = json.loads((out_pred / "aggregate.json").read_text())
    assert agg_gt["divisor_convention"] == "gt"
    assert agg_pred["divisor_convention"] == "pred"
    assert agg_gt["ard"] != agg_pred["ard"]
    per = [json.loads(l) for l in (out_gt / "per_sample.jsonl")
           .read_text().splitlines()]
    assert len(per) == 4
    assert (out_gt / "summary.csv").read_text().startswith("sample_id,")


def test_project_round_trip(workspace):
    root = workspace["root"]
    s = D.load_sample(workspace["data"], "000001")
    intr = D.SceneSpec(width=32, height=32).intrinsics
    cloud = G.backproject(s.sparse, intr)
    G.save_cloud_csv(cloud, root / "cloud.csv")
    G.save_calibration(intr, G.RigidPose.identity(), root / "calib.txt")
    assert main(["project", "--cloud", str(root / "cloud.csv"),
                 "--calibration", str(root / "calib.txt"),
                 "--out", str(root / "proj.pgm")]) == 0
    proj = D.load_depth_pgm(root / "proj.pgm")
    np.testing.assert_array_equal(proj > 0, s.sparse > 0)


def test_densify_command(workspace):
    root, data = workspace["root"], workspace["data"]
    code = main(["densify", "--sparse", str(data / "000002_sparse.pgm"),
                 "--guide", str(data / "000002_rgb.ppm"),
                 "--max-iterations", "20000",
                 "--out", str(root / "dense.pgm")])
    assert code == 0
    dense = D.load_depth_pgm(root / "dense.pgm")
    assert np.all(dense > 0)


def test_bad_input_exits_one(workspace, capsys):
    assert main(["gen-data", "--count", "1", "--out",
                 str(workspace["root"] / "w"),
                 "--weather-mix", "day-1.0"]) == 1
    capsys.readouterr()


def test_runtime_failure_exits_two(workspace, capsys):
    code = main(["predict", "--checkpoint", "/does/not/exist.ckpt",
                 "--rgb", str(workspace["data"] / "000000_rgb.ppm"),
                 "--out", str(workspace["root"] / "never.pgm")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["code"] == 2


def test_depth_colormap_shape_and_range():
    depth = np.linspace(0.5, 80.0, 12).reshape(3, 4)
    rgb = depth_colormap(depth, 0.5, 80.0)
    assert rgb.shape == (3, 4, 3)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    # near and far map to different colors
    assert not np.allclose(rgb[0, 0], rgb[2, 3])


def test_gradcheck_command_quick(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "ops passed" in out
