import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from voxgan import cli
from voxgan.checkpoint import load_checkpoint


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _run_ok(argv):
    code = cli.run([str(a) for a in argv])
    assert code == 0, argv
    return code


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    prof = root / "micro.json"
    prof.write_text(json.dumps({"name": "micro", "resolution": 16, "latent_dim": 8,
                                "base_channels": 4, "image_size": 64}))
    p = ["--profile", prof]
    _run_ok(["make-data", *p, "--n", 12, "--classes", "box,sphere,chair", "--seed", 3, "--out", root / "data"])
    _run_ok(["train", "gan", *p, "--data", root / "data", "--batch-size", 4, "--epochs", 2,
             "--lr-g", 1e-3, "--lr-d", 1e-3, "--seed", 5, "--out", root / "gan"])
    _run_ok(["train", "vaegan", *p, "--data", root / "data", "--batch-size", 4, "--seed", 5,
             "--out", root / "vae"])
    for name in ("a", "b", "c"):
        np.save(root / f"{name}.npy", np.full(8, {"a": 0.9, "b": 0.2, "c": 0.4}[name], np.float32))
    return root, p


def _commands(root, p):
    g = root / "gan" / "final.vxg"
    v = root / "vae" / "final.vxg"
    data = root / "data"
    return {
        "make-data": ["make-data", *p, "--n", 6, "--seed", 1],
        "train-gan": ["train", "gan", *p, "--data", data, "--batch-size", 4, "--seed", 2, "--checkpoint-every", 2],
        "train-vaegan": ["train", "vaegan", *p, "--data", data, "--batch-size", 4, "--seed", 2],
        "sample": ["sample", *p, "--checkpoint", g, "--n", 2, "--seed", 4],
        "interpolate": ["interpolate", *p, "--checkpoint", g, "--steps", 3, "--seed", 4],
        "arith": ["arith", *p, "--checkpoint", g, "--a", root / "a.npy", "--b", root / "b.npy",
                  "--c", root / "c.npy"],
        "sweep": ["sweep", *p, "--checkpoint", g, "--dim", 1, "--n-values", 3, "--seed", 4],
        "classify": ["classify", *p, "--checkpoint", g, "--data", data, "--C", 1.0,
                     "--budgets", "1,2", "--repeats", 2, "--seed", 4],
        "evaluate": ["evaluate", *p, "--checkpoint", v, "--data", data],
        "evaluate-oracle": ["evaluate", *p, "--data", data, "--oracle"],
        "visualize": ["visualize", *p, "--checkpoint", g, "--data", data, "--top", 2,
                      "--channels", "0,1"],
    }


@pytest.mark.parametrize("name", ["make-data", "train-gan", "train-vaegan", "sample", "interpolate", "arith",
                                  "sweep", "classify", "evaluate", "evaluate-oracle", "visualize"])
def test_subcommand_is_deterministic(ws, name, tmp_path):
    root, p = ws
    argv = _commands(root, p)[name] + ["--out", tmp_path / "run"]
    _run_ok(argv)
    first = _tree(tmp_path / "run")
    shutil.move(tmp_path / "run", tmp_path / "first")
    _run_ok(argv)
    second = _tree(tmp_path / "run")
    assert first.keys() == second.keys()
    assert len(first) > 1
    for k in first:
        assert first[k] == second[k], k


def test_train_artifacts(ws):
    root, _ = ws
    ckpt = load_checkpoint(root / "gan" / "final.vxg")
    assert set(ckpt.nets) == {"G", "D"} and ckpt.prior == "uniform01"
    vae = load_checkpoint(root / "vae" / "final.vxg")
    assert set(vae.nets) == {"E", "G", "D"} and vae.prior == "standard_normal"
    log = (root / "gan" / "trainlog.csv")
    assert log.exists()
    assert len(log.read_text().strip().splitlines()) == 1 + 2 * 3


def test_config_echo_round_trip(ws, tmp_path):
    root, p = ws
    out = tmp_path / "s1"
    _run_ok(["sample", *p, "--checkpoint", root / "gan" / "final.vxg", "--n", 2, "--seed", 9,
             "--threshold", 0.4, "--out", out])
    echo = json.loads((out / "config.json").read_text())
    assert echo["command"] == ["sample"]
    assert echo["params"]["seed"] == 9 and echo["params"]["threshold"] == 0.4
    replay = tmp_path / "s2"
    _run_ok(["--config", out / "config.json", "--out", replay])
    a, b = _tree(out), _tree(replay)
    a.pop("config.json"), b.pop("config.json")
    assert a == b
    echo2 = json.loads((replay / "config.json").read_text())
    assert {k: v for k, v in echo2["params"].items() if k != "out"} == \
        {k: v for k, v in echo["params"].items() if k != "out"}


def test_explicit_flag_beats_config(ws, tmp_path):
    root, p = ws
    out = tmp_path / "a"
    _run_ok(["sample", *p, "--checkpoint", root / "gan" / "final.vxg", "--n", 1, "--out", out])
    _run_ok(["--config", out / "config.json", "--n", 3, "--out", tmp_path / "b"])
    assert json.loads((tmp_path / "b" / "config.json").read_text())["params"]["n"] == 3
    assert len(list((tmp_path / "b").glob("sample_*.raw"))) == 3


def test_train_kind_echoed(ws):
    root, _ = ws
    echo = json.loads((root / "vae" / "config.json").read_text())
    assert echo["command"] == ["train", "vaegan"]


def test_oracle_evaluation_scores_one(ws, tmp_path):
    root, p = ws
    _run_ok(["evaluate", *p, "--data", root / "data", "--oracle", "--out", tmp_path])
    table = (tmp_path / "ap_table.csv").read_text().splitlines()
    assert table[0].startswith("method")
    assert all(float(x) == 1.0 for x in table[1].split(",")[1:])


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["train"],
    ["train", "gan", "--profile", "nope"],
    ["sample", "--profile", "tiny"],
    ["sample", "--profile", "tiny", "--checkpoint", "/does/not/exist.vxg"],
    ["make-data", "--classes", "teapot"],
    ["sample", "--no-such-flag"],
    ["--config", "/does/not/exist.json"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert cli.run([str(a) for a in argv] + ["--out", str(tmp_path)] if argv else []) == 2


def test_bad_gate_is_usage_error(ws, tmp_path):
    root, p = ws
    argv = ["train", "gan", *p, "--data", root / "data", "--gate", 1.5, "--out", tmp_path]
    assert cli.run([str(a) for a in argv]) == 2


def test_profile_mismatch_is_usage_error(ws, tmp_path):
    root, _ = ws
    argv = ["sample", "--profile", "tiny", "--checkpoint", root / "gan" / "final.vxg", "--out", tmp_path]
    assert cli.run([str(a) for a in argv]) == 2


def test_corrupt_checkpoint_exit_3(ws, tmp_path):
    root, p = ws
    blob = bytearray((root / "gan" / "final.vxg").read_bytes())
    blob[-20] ^= 0xFF
    bad = tmp_path / "bad.vxg"
    bad.write_bytes(bytes(blob))
    argv = ["sample", *p, "--checkpoint", bad, "--out", tmp_path / "o"]
    assert cli.run([str(a) for a in argv]) == 3


def test_corrupt_data_exit_3(ws, tmp_path):
    root, p = ws
    data = tmp_path / "data"
    shutil.copytree(root / "data", data)
    victim = sorted(data.rglob("*.binvox"))[0]
    victim.write_bytes(b"#binvox 1\ngarbage")
    argv = ["train", "gan", *p, "--data", data, "--batch-size", 4, "--out", tmp_path / "o"]
    assert cli.run([str(a) for a in argv]) == 3


def test_latent_size_mismatch_exit_3(ws, tmp_path):
    root, p = ws
    np.save(tmp_path / "short.npy", np.zeros(3, np.float32))
    z = tmp_path / "short.npy"
    argv = ["arith", *p, "--checkpoint", root / "gan" / "final.vxg", "--a", z, "--b", z, "--c", z,
            "--out", tmp_path / "o"]
    assert cli.run([str(a) for a in argv]) == 3


def test_divergence_exit_4(ws, tmp_path):
    root, p = ws
    argv = ["train", "gan", *p, "--data", root / "data", "--batch-size", 4, "--lr-g", 1e30, "--lr-d", 1e30,
            "--out", tmp_path]
    with np.errstate(all="ignore"):
        assert cli.run([str(a) for a in argv]) == 4
