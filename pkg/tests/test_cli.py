import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from kcontract import cli
from kcontract.cli import main
from kcontract.errors import IntegrationError
from kcontract.network import HOPFIELD_EX5_W, hopfield_network
from kcontract.sysfile import write_system


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_compound_example(tmp_path, capsys):
    path = tmp_path / "m.json"
    path.write_text("[[1, 2], [-1, 3], [0, 3]]")
    code, out, _ = run(capsys, "compound", str(path), "--k", "2")
    assert code == 0
    assert json.loads(out)["matrix"] == [[5.0], [3.0], [-3.0]]


def test_compound_text_input_and_additive(tmp_path, capsys):
    path = tmp_path / "m.txt"
    path.write_text("1 0 0\n0 1 0\n0 0 1\n")
    code, out, _ = run(capsys, "compound", str(path), "--k", "2", "--mode", "add",
                       "--format", "csv")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    np.testing.assert_array_equal(np.array(rows, dtype=float), 2 * np.eye(3))


def test_compound_cap_and_parse_errors(tmp_path, capsys):
    big = tmp_path / "big.txt"
    np.savetxt(big, np.eye(20))
    assert run(capsys, "compound", str(big), "--k", "10")[0] == 3
    huge = tmp_path / "huge.txt"
    np.savetxt(huge, np.eye(40))
    assert run(capsys, "compound", str(huge), "--k", "20")[0] == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\n3\n")
    assert run(capsys, "compound", str(bad), "--k", "1")[0] == 2
    assert run(capsys, "compound", str(tmp_path / "missing"), "--k", "1")[0] == 2
    with pytest.raises(SystemExit) as info:
        main(["compound"])
    assert info.value.code == 2


@pytest.mark.parametrize("argv,code", [
    (["hopfield-ex5", "--alpha", "1.5", "--k", "2"], 0),
    (["hopfield-ex5", "--alpha", "1.5", "--k", "1"], 1),
    (["opinion-ex6", "--u", "0.5", "--k", "2"], 0),
    (["opinion-ex6", "--u", "0.5", "--k", "1"], 1),
    (["power-2bus", "--k", "2"], 0),
    (["power-2bus", "--k", "2", "--param", "a=0.05"], 2),
    (["power-2bus", "--k", "2", "--param", "b=1"], 2),
    (["nonexistent-preset", "--k", "2"], 2),
    (["hopfield-ex5", "--k", "7"], 2),
])
def test_certify_exit_codes(capsys, argv, code):
    assert run(capsys, "certify", *argv)[0] == code


def test_certify_output_fields(capsys):
    code, out, _ = run(capsys, "certify", "power-2bus", "--k", "2")
    doc = json.loads(out)
    cert = doc["certificate"]
    for key in ("status", "margin", "rate", "Q", "eta1", "eta2", "which_gain", "details"):
        assert key in cert
    assert doc["closed_form"]["passes"] is True


def test_certify_sampled_only_exit(tmp_path, capsys):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({
        "kind": "network", "D": [1, 1], "W1": [[0.2, 0], [0, 0.2]], "W2": [[1, 0], [0, 1]],
        "activation": {"kind": "user", "params": {"function": "atan"}}}))
    assert run(capsys, "certify", str(path), "--k", "1")[0] == 4


def test_certify_lurie_given_q(tmp_path, capsys):
    sys_path = tmp_path / "l.json"
    sys_path.write_text(json.dumps({
        "kind": "lurie", "A": [[-2, 0.3], [0, -1.5]], "B": [[0.5], [0.2]], "C": [[0.3, 0.4]],
        "nonlinearity": {"kind": "tanh-diagonal"}}))
    q_path = tmp_path / "q.json"
    q_path.write_text("[[1, 0], [0, 2]]")
    code, out, _ = run(capsys, "certify", str(sys_path), "--k", "1", "--strategy", "given-Q",
                       "--q-file", str(q_path))
    assert code == 0
    assert json.loads(out)["certificate"]["Q"] == [[1.0, 0.0], [0.0, 2.0]]
    assert run(capsys, "certify", str(sys_path), "--k", "1", "--strategy", "given-Q")[0] == 2
    assert run(capsys, "certify", str(sys_path), "--k", "2")[0] == 0


def test_certify_is_deterministic(capsys):
    outs = {run(capsys, "certify", "opinion-ex6", "--k", "3")[1] for _ in range(2)}
    assert len(outs) == 1


def test_simulate_hopfield(tmp_path, capsys):
    csv_path = tmp_path / "traj.csv"
    code, out, _ = run(capsys, "simulate", "hopfield-ex5", "--alpha", "0.71", "--n-traj", "10",
                       "--t-end", "50", "--out", str(csv_path), "--n-out", "11")
    assert code == 0
    audit = json.loads(out)
    assert audit["converged"] == 10
    assert len(audit["equilibria"]) == 3
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["t", "x1", "x2", "x3", "traj_id"]
    assert len(rows) == 1 + 10 * 11
    assert {r[-1] for r in rows[1:]} == {str(i) for i in range(10)}


def test_simulate_audit_and_determinism(tmp_path, capsys):
    argv = ["simulate", "hopfield-ex5", "--n-traj", "3", "--t-end", "20", "--audit-k", "2",
            "--n-out", "21"]
    code, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    assert code == 0 and first == second
    vol = json.loads(first)["volume_audit"]
    assert vol["within_bound"] and vol["monotone"]
    assert vol["observed_rate"] <= -vol["certified_rate"]


def test_simulate_csv_to_stdout(capsys):
    code, out, _ = run(capsys, "simulate", "opinion-ex6", "--n-traj", "2", "--t-end", "5",
                       "--n-out", "3", "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == "t,x1,x2,x3,traj_id"
    assert len(out.splitlines()) == 1 + 2 * 3


def test_simulate_rejects_bad_horizon(capsys):
    assert run(capsys, "simulate", "hopfield-ex5", "--t-end", "0")[0] == 2
    assert run(capsys, "simulate", "hopfield-ex5", "--t-end", "-3")[0] == 2


def test_simulate_escape_is_reported(tmp_path, capsys):
    path = tmp_path / "unstable.json"
    # x' = 5x + tanh(x) escapes; the sweep stops at |x| = 1e6 and counts it
    path.write_text(json.dumps({
        "kind": "network", "D": [-5.0], "W1": [[1.0]], "W2": [[1.0]]}))
    code, out, _ = run(capsys, "simulate", str(path), "--n-traj", "2", "--t-end", "50")
    assert code == 0
    assert json.loads(out)["unbounded"] == 2


def test_simulate_failure_exit(monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise IntegrationError("step size collapsed", t=1.0, state=np.zeros(3))

    monkeypatch.setattr(cli, "convergence_sweep", broken)
    code, _, err = run(capsys, "simulate", "hopfield-ex5", "--n-traj", "2")
    assert code == 5
    assert "step size collapsed" in err


def test_equilibria_command(tmp_path, capsys):
    path = tmp_path / "h.json"
    write_system(path, hopfield_network(HOPFIELD_EX5_W, 0.71))
    code, out, _ = run(capsys, "equilibria", str(path))
    assert code == 0
    doc = json.loads(out)
    assert len(doc["equilibria"]) == 3
    assert max(doc["residuals"]) <= 1e-10


@pytest.mark.parametrize("example", ["hopfield-ex5", "opinion-ex6", "power-2bus"])
def test_reproduce(capsys, example):
    code, out, _ = run(capsys, "reproduce", example)
    doc = json.loads(out)
    assert code == 0 and doc["ok"]
    assert all({"quantity", "computed", "reference", "abs_diff"} <= set(r) for r in doc["rows"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "kcontract", "reproduce", "hopfield-ex5",
                          "--format", "csv"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.startswith("quantity,computed,reference,abs_diff,tol,ok")
