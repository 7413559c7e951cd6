import json
import os
import subprocess
import sys

import numpy as np
import pytest

from horncore.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def kv(text):
    return dict(line.split(": ", 1) for line in text.splitlines() if ": " in line and not line.startswith("record"))


def test_flops_report(capsys):
    code, out, _ = run(capsys, "flops", "--preset", "hornet-t-7x7", "--input", "224")
    assert code == 0
    d = kv(out)
    assert abs(float(d["gflops"]) - 4.0) / 4.0 < 0.05
    assert abs(int(d["params"]) / 1e6 - 22) / 22 < 0.05
    records = [json.loads(l[len("record "):]) for l in out.splitlines() if l.startswith("record ")]
    assert {r["part"] for r in records} == {"stem", "downsample", "gnconv", "ffn", "head", "extras"}
    assert sum(r["macs"] for r in records) == int(d["flops"])


def test_flops_single_operator(capsys):
    code, out, _ = run(capsys, "flops", "--op", "gnconv", "--channels", "16", "--n", "3", "--input", "7")
    d = kv(out)
    assert code == 0 and d["total"] == d["empirical_macs"]


def test_probe_order(capsys):
    code, out, _ = run(capsys, "probe-order", "--op", "gnconv", "--n", "2")
    assert code == 0 and "measured degree: 3" in out
    code, out, _ = run(capsys, "probe-order", "--op", "plain_dwconv")
    assert "measured degree: 1" in out
    code, out, _ = run(capsys, "probe-order", "--op", "all")
    assert out.count("consistent=True") == 7


def test_train_eval_dump_pipeline(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[model]\npreset = micro-iso\nwidth = 8\ndepths = 1\nimage_size = 16\n"
                   "[train]\nsteps = 3\nbatch_size = 8\n[data]\nsamples = 40\n", encoding="utf-8")
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--out", str(out_dir), "--seed", "2")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "step,loss,acc" and len(lines) == 4
    ck = str(out_dir / "model.hrnc")
    code, out, _ = run(capsys, "eval", "--checkpoint", ck, "--config", str(cfg))
    assert code == 0 and kv(out)["samples"] == "40"
    acc1 = kv(out)["accuracy"]
    code, out, _ = run(capsys, "eval", "--checkpoint", ck, "--config", str(cfg))
    assert kv(out)["accuracy"] == acc1
    np.save(tmp_path / "img.npy", np.random.default_rng(0).standard_normal((3, 16, 16)))
    code, out, _ = run(capsys, "dump-weights", "--checkpoint", ck, "--image", str(tmp_path / "img.npy"),
                       "--layer", "0", "--locations", "0,0;2,3", "--out", str(tmp_path / "w"))
    assert code == 0 and len(out.split()) == 4
    assert all(os.path.exists(p) for p in out.split())


def test_train_reproducible_output(tmp_path, capsys):
    args = ["train", "--preset", "micro-iso", "--steps", "2", "--threads", "1"]
    _, a, _ = run(capsys, *args, "--out", str(tmp_path / "a"))
    _, b, _ = run(capsys, *args, "--out", str(tmp_path / "b"))
    assert a == b
    assert (tmp_path / "a" / "model.hrnc").read_bytes() == (tmp_path / "b" / "model.hrnc").read_bytes()


def test_missing_config_fails_cleanly(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o"))
    assert code != 0 and "missing.cfg" in err
    assert not (tmp_path / "o").exists()


def test_eval_missing_checkpoint(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "none.hrnc"))
    assert code != 0 and "not found" in err


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--preset", "micro-iso", "--batch", "128", "--repeats", "1")
    assert code == 0 and float(kv(out)["images_per_second"]) > 0


def test_unknown_flag_exits_2():
    proc = subprocess.run([sys.executable, "-m", "horncore.cli", "flops", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
