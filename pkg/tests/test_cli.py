import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dpips.cli import main
from dpips.verify import MAX_BITS, MAX_DEVICES, check_snapshot, random_network, run_oracle

ROOT = Path(__file__).resolve().parents[1]


def test_gen_zib54(tmp_path, capsys):
    assert main(["gen", "--topology", "zib54", "--out-dir", str(tmp_path)]) == 0
    topo = json.loads((tmp_path / "topology.json").read_text())
    assert len(topo["devices"]) == 54
    assert "54 devices" in capsys.readouterr().out
    from dpips.netmodel import build_snapshot
    snap = build_snapshot(tmp_path / "topology.json", tmp_path / "rules.json")
    assert len(snap.devices) == 54 and snap.rule_count() > 0


def test_sweep_is_byte_identical(tmp_path):
    cfg = tmp_path / "aarnet.json"
    cfg.write_text(json.dumps({"topology": "aarnet", "implants": 2, "trials": 1}))
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert main(["sweep", "--config", str(cfg), "--seed", "7", "--out-dir", str(out)]) == 0
        outs.append(out)
    for name in ("metrics.json", "verdicts.jsonl", "config.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m = json.loads((outs[0] / "metrics.json").read_text())
    assert m["implanted"] == 2 and m["detected"] == 2
    assert "backend" in json.loads((outs[0] / "timings.json").read_text())


def test_report_reads_sweep_output(tmp_path, capsys):
    assert main(["sweep", "--topology", "aarnet", "--implants", "1", "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["report", "--out-dir", str(tmp_path)]) == 0
    assert "detected" in capsys.readouterr().out


def test_report_missing_dir(tmp_path):
    assert main(["report", "--out-dir", str(tmp_path / "nope")]) == 1


def test_verify_passes(capsys):
    assert main(["verify", "--max-devices", "8", "--header-bits", "12", "--networks", "6"]) == 0
    assert "0 mismatches" in capsys.readouterr().out


def test_verify_rejects_bad_bounds():
    assert main(["verify", "--header-bits", "40"]) == 2


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_console_script_installed():
    out = subprocess.run([sys.executable, "-m", "dpips.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout


def test_oracle_catches_a_wrong_answer(monkeypatch):
    import dpips.verify as verify
    snap = random_network(np.random.default_rng(1), n_devices=4, width=6)
    real = verify.expected_trajectories

    def broken(*args):
        r = real(*args)
        return type(r)(r.src, r.dst, r.port, r.header_space, r.paths[1:], r.loops)

    monkeypatch.setattr(verify, "expected_trajectories", broken)
    assert not check_snapshot(snap).ok


def test_random_networks_stay_in_bounds():
    rng = np.random.default_rng(0)
    for _ in range(20):
        snap = random_network(rng)
        assert 2 <= len(snap.devices) <= MAX_DEVICES and 3 <= snap.header_bits <= MAX_BITS


def test_benchmark_smoke(tmp_path):
    out = tmp_path / "bench.json"
    proc = subprocess.run([sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--scale", "0.02",
                           "--repeat", "1", "--json", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(out.read_text())
    assert [r["kernel"] for r in doc] == ["first_match", "overlap", "label_hash", "visit_counts"]
    assert all(r["numpy_s"] > 0 for r in doc)
