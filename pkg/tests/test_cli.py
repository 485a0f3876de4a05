import json

import pytest

from idsprites.cli import main
from idsprites.stream import read_dataset

STREAM = {"num_tasks": 2, "shapes_per_task": 2, "resolution": 32,
          "grid": {"k_scale": 2, "k_orientation": 2, "k_pos_x": 2, "k_pos_y": 2}, "split_ratios": [0.5, 0.25, 0.25]}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"stream": STREAM, "method": "finetune", "epochs_per_task": 1}))
    return p


def test_gen_and_inspect(tmp_path, cfg_path):
    assert main(["gen", "--config", str(cfg_path), "--out", str(tmp_path / "g"), "--pixels"]) == 0
    ds = read_dataset(tmp_path / "g" / "task_0001.idsp")
    assert ds.class_ids == [2, 3] and ds.pixels is not None
    assert (tmp_path / "g" / "config.json").exists()
    assert main(["inspect", "--dataset", str(tmp_path / "g" / "task_0001.idsp"), "--out", str(tmp_path / "i")]) == 0
    assert (tmp_path / "i" / "task_0001.png").exists()


def test_run_and_plot(tmp_path, cfg_path):
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg_path), "--out", str(out), "--seed", "7"]) == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["seed"] == 7 and echo["stream"]["master_seed"] == 7
    assert main(["plot", str(out / "finetune.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "plot.svg").exists()


def test_threads_flag_byte_identical(tmp_path, cfg_path):
    for n in (1, 2):
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / f"t{n}"), "--threads", str(n)]) == 0
    assert (tmp_path / "t1" / "finetune.csv").read_bytes() == (tmp_path / "t2" / "finetune.csv").read_bytes()


def test_oneshot_and_openset(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"stream": STREAM, "method": "disentangled-analytic"}))
    assert main(["oneshot", "--config", str(p), "--out", str(tmp_path / "o"), "--counts", "2,3"]) == 0
    rows = (tmp_path / "o" / "oneshot.csv").read_text().splitlines()
    assert rows[0] == "policy,2,3" and len(rows) == 3
    assert main(["openset", "--config", str(p), "--out", str(tmp_path / "s"), "--seen", "4", "--unseen", "4"]) == 0
    assert (tmp_path / "s" / "openset.svg").exists() and (tmp_path / "s" / "openset.csv").exists()


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"method": "nope"}))
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    junk = tmp_path / "junk.idsp"
    junk.write_bytes(b"XXXXXXXXXXXXXXXXXXXXXXXXXXXX")
    assert main(["inspect", "--dataset", str(junk)]) == 3
    assert main(["inspect", "--dataset", str(tmp_path / "missing.idsp")]) == 4
    small = tmp_path / "small.json"
    small.write_text(json.dumps({"stream": STREAM, "method": "replay-buffer-only", "replay_capacity": 1}))
    assert main(["run", "--config", str(small), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--threads", "0"]) == 2
