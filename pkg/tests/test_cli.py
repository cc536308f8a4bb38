import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from brelu_mpc.cli import main
from brelu_mpc.nn import PatchPlan, load_model
from brelu_mpc.ledger import CommLedger


def run(capsys, *args):
    """Invoke the CLI in-process; returns (exit code, stdout, stderr)."""
    try:
        code = main(list(args))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workspace(tmp_path, capsys):
    m, x = tmp_path / "model.json", tmp_path / "x.bin"
    code, _, _ = run(capsys, "gen-model", "--out", str(m), "--inputs", "6", "--inputs-out", str(x))
    assert code == 0
    return tmp_path, m, x


def test_gen_model_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-model", "--out", str(tmp_path / "m.json"))
    assert code == 0
    assert json.loads(out)["channels"] == 12


def test_pipeline_and_idempotence(workspace, capsys):
    d, m, x = workspace
    t = d / "table.csv"
    assert run(capsys, "estimate", "--model", str(m), "--out", str(t), "--samples", "8")[0] == 0
    first = t.read_text()
    assert run(capsys, "estimate", "--model", str(m), "--out", str(t), "--samples", "8")[0] == 0
    assert t.read_text() == first

    p = d / "plan.json"
    code, out, _ = run(capsys, "plan", "--table", str(t), "--model", str(m), "--out", str(p), "--budget-frac", "0.1")
    info = json.loads(out)
    assert code == 0 and info["weight"] <= info["budget"] == int(0.1 * info["full_weight"])
    plan = PatchPlan.from_json(p.read_text())
    assert plan.weight(load_model(m)) == info["weight"]

    code, out, _ = run(capsys, "infer-plain", "--model", str(m), "--input", str(x), "--plan", str(p))
    plain = json.loads(out)["argmax"]
    led = d / "ledger.csv"
    code, out, _ = run(capsys, "--ledger-out", str(led), "secure-infer", "--model", str(m), "--input", str(x),
                       "--plan", str(p), "--verify", "--manifest-out", str(d / "manifest.json"))
    res = json.loads(out)
    assert code == 0 and res["argmax"] == plain and res["argmax_agreement"] == 1.0
    assert led.read_text().startswith("layer,protocol,phase")
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["plan"] == str(p) and len(manifest["config_hash"]) == 64


def test_secure_infer_ledger_json(workspace, capsys):
    d, m, x = workspace
    led = d / "l.json"
    code, out, _ = run(capsys, "secure-infer", "--model", str(m), "--input", str(x), "--ledger-out", str(led))
    assert code == 0
    assert CommLedger.from_json(led.read_text()).payload() == json.loads(out)["payload_bytes"]


def test_verification_mismatch_exit_4(workspace, capsys):
    # the 16-bit classification window is too narrow for this untrained model's patch sums
    d, m, x = workspace
    t, p = d / "t.csv", d / "p.json"
    run(capsys, "estimate", "--model", str(m), "--out", str(t), "--samples", "8")
    run(capsys, "plan", "--table", str(t), "--out", str(p), "--mode", "constant")
    code, _, err = run(capsys, "--preset", "classification-16bit", "secure-infer", "--model", str(m),
                       "--input", str(x), "--plan", str(p), "--verify")
    assert code == 4
    assert json.loads(err.strip().splitlines()[-1])["error"] == "VerificationError"


def test_config_errors_exit_2(workspace, capsys):
    d, m, x = workspace
    assert run(capsys, "--seed", "xyz", "gen-model", "--out", str(d / "a.json"))[0] == 2
    bad = d / "bad.json"
    bad.write_text('{"codec": {"frac_bits": -1}}')
    assert run(capsys, "--config", str(bad), "gen-model", "--out", str(d / "a.json"))[0] == 2
    assert run(capsys, "plan", "--table", str(d / "missing.csv"), "--out", str(d / "p.json"))[0] == 2
    assert run(capsys, "gen-model", "--out", str(d / "a.json"), "--inputs", "3")[0] == 2


def test_protocol_abort_exit_3(workspace, capsys, tmp_path):
    d, m, x = workspace
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"transport": {"timeout": 0.5, "base_port": 47990}}))
    # a lone party never hears from its peers
    code, _, err = run(capsys, "--config", str(cfg), "party", "--role", "0", "--model", str(m), "--input", str(x))
    assert code == 3
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 3


def test_analyze_bits_uniform(tmp_path, capsys):
    # 3.5e-4 lies between the exact rates for 5 and 6 ignored bits, well clear of sampling noise
    code, out, _ = run(capsys, "analyze-bits", "--uniform-bits", "16", "--synthetic", "200000",
                       "--target", "3.5e-4", "--out", str(tmp_path / "s.csv"))
    assert code == 0 and json.loads(out)["k_lsb"] == 5
    assert (tmp_path / "s.csv").read_text().startswith("k_msb,k_lsb,error")


def test_comm_model_table1(capsys):
    code, out, _ = run(capsys, "comm-model", "--preset", "table1")
    rows = out.strip().splitlines()[1:]
    assert code == 0 and [int(r.split(",")[-1]) for r in rows] == [21, 520, 218, 52, 22, 42, 27, 583, 70]


def test_comm_model_sweep(workspace, capsys):
    _, m, _ = workspace
    code, out, _ = run(capsys, "comm-model", "--model", str(m), "--sizes", "8,32")
    fr = [float(r.split(",")[1]) for r in out.strip().splitlines()[1:]]
    assert code == 0 and fr[1] > fr[0]


def test_transform_and_report(workspace, capsys):
    d, m, _ = workspace
    mm = d / "mp.json"
    run(capsys, "gen-model", "--out", str(mm), "--pool", "maxpool")
    code, out, _ = run(capsys, "transform", "--model", str(mm), "--out", str(d / "t.json"))
    assert code == 0 and "maxpool" not in json.loads(out)["layers"]
    code, out, _ = run(capsys, "report", "--model", str(m), "--out-dir", str(d / "rep"), "--samples", "6",
                       "--trials", "10")
    files = json.loads(out)["files"]
    assert code == 0
    for name in ("table1.csv", "fig4_additive_vs_real.csv", "fig6_bit_error.csv", "fig8_relu_cost.csv",
                 "fig1_budget_curve.csv", "distortion_table.csv"):
        assert name in files


def _free_port():
    for base in range(48100, 48900, 10):
        try:
            for off in range(3):
                with socket.socket() as s:
                    s.bind(("127.0.0.1", base + off))
            return base
        except OSError:
            continue
    pytest.skip("no free ports")


def test_tcp_processes_match_inprocess(workspace, capsys, tmp_path):
    d, m, x = workspace
    cfg = tmp_path / "tcp.json"
    cfg.write_text(json.dumps({"transport": {"kind": "tcp", "base_port": _free_port(), "timeout": 30}}))
    cmd = [sys.executable, "-m", "brelu_mpc.cli", "--config", str(cfg), "secure-infer", "--model", str(m),
           "--input", str(x), "--verify", "--workdir", str(tmp_path)]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    tcp = json.loads(proc.stdout)
    code, out, _ = run(capsys, "secure-infer", "--model", str(m), "--input", str(x))
    local = json.loads(out)
    assert tcp["argmax"] == local["argmax"] and tcp["payload_bytes"] == local["payload_bytes"]
