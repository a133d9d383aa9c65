import csv
import json
import subprocess
import sys

import pytest

from rmkit.cli import main
from rmkit.mlp import MLPModel
from rmkit.mps import MPSState
from rmkit.states import make_ghz, save_state


@pytest.fixture
def config(tmp_path):
    def write(**kw):
        d = {"state": {"kind": "ghz", "n": 3}, "n_u": 10, "n_m": 20, "n_repetitions": 5,
             "master_seed": 4, "burn_in": 5}
        d.update(kw)
        p = tmp_path / "config.json"
        p.write_text(json.dumps(d))
        return str(p)
    return write


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_estimate(tmp_path, config):
    out, meta = tmp_path / "o.csv", tmp_path / "o.json"
    assert main(["estimate", "--config", config(), "--csv", str(out), "--json", str(meta)]) == 0
    rows = read_csv(out)
    assert rows[0][:4] == ["index", "count", "xi_0", "phi_0"] and rows[0][-1] == "ratio"
    assert sum(int(r[1]) for r in rows[1:]) == 10
    m = json.loads(meta.read_text())
    assert m["command"] == "estimate" and m["result"]["n_s"] == 10
    assert {"numpy", "scipy", "python", "rmkit"} <= set(m["versions"])
    assert m["seeds"]["master_seed"] == 4 and m["runtime_seconds"] >= 0


def test_estimate_stdout_metadata(config, capsys, tmp_path):
    assert main(["estimate", "--config", config(), "--backend", "exact", "--nm-infinity",
                 "--n-u", "7", "--seed", "9", "--csv", str(tmp_path / "x.csv")]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["config"]["sampler"]["backend"] == "exact"
    assert m["config"]["n_m"] is None and m["config"]["n_u"] == 7
    assert m["config"]["master_seed"] == 9
    assert m["result"]["p2_hat"] == pytest.approx(1.0)


@pytest.mark.parametrize("argv", [
    ["estimate"],
    ["estimate", "--config", "/nonexistent/cfg.json"],
    ["compress", "--bond-dim", "2", "--out", "x.json"],
    ["analytics", "--kind", "uniform", "--epsilon", "-1"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_config_content_exit_2(config):
    assert main(["estimate", "--config", config(n_repetitions=0)]) == 2
    assert main(["estimate", "--config", config(state={"kind": "nope", "n": 2})]) == 2


def test_resource_limit_exit_3(config, capsys):
    assert main(["estimate", "--config", config(state={"kind": "ghz", "n": 14})]) == 3
    assert "resource limit" in capsys.readouterr().err
    assert main(["estimate", "--config", config(state={"kind": "ghz", "n": 5}),
                 "--max-qubits", "4"]) == 3


def test_error_curve(tmp_path, config):
    out = tmp_path / "e.csv"
    argv = ["error-curve", "--config", config(), "--variable", "n_u", "--values", "2,4",
            "--csv", str(out), "--json", str(tmp_path / "e.json")]
    assert main(argv) == 0
    first = out.read_bytes()
    rows = read_csv(out)
    assert rows[0][0] == "n_u" and [r[0] for r in rows[1:]] == ["2", "4"]
    assert main(argv) == 0
    assert out.read_bytes() == first
    assert main(["error-curve", "--config", config()]) == 2


def test_scaling(tmp_path, config):
    out = tmp_path / "s.csv"
    assert main(["scaling", "--config", config(sampler={"backend": "exact"},
                                               state={"kind": "product", "n": 1}),
                 "--n-values", "1,2", "--epsilon", "0.2", "--csv", str(out),
                 "--json", str(tmp_path / "s.json")]) == 0
    rows = read_csv(out)
    assert rows[0] == ["n_qubits", "budget", "n_u", "n_m", "error", "censored"]
    assert len(rows) == 3
    meta = json.loads((tmp_path / "s.json").read_text())
    assert meta["epsilon"] == 0.2 and "a" in meta["fit"]


def test_compare(tmp_path, config):
    out = tmp_path / "c.csv"
    assert main(["compare", "--config", config(samplers=[{"backend": "uniform"},
                                                        {"backend": "exact"}]),
                 "--csv", str(out), "--json", str(tmp_path / "c.json")]) == 0
    assert [r[0] for r in read_csv(out)[1:]] == ["uniform", "exact"]


def test_train_and_use_model(tmp_path, config):
    model = tmp_path / "m.json"
    hist = tmp_path / "h.csv"
    cfg = config(state={"kind": "product", "n": 2}, training={"layer_widths": [8]})
    assert main(["train", "--config", cfg, "--epochs", "3", "--samples", "200",
                 "--out", str(model), "--csv", str(hist), "--json", str(tmp_path / "t.json")]) == 0
    assert MLPModel.load(model).layer_widths == (4, 8, 1)
    assert len(read_csv(hist)) == 4
    cfg2 = config(state={"kind": "product", "n": 2},
                  sampler={"backend": "mlp", "path": str(model), "normalization_samples": 200})
    assert main(["estimate", "--config", cfg2, "--csv", str(tmp_path / "x.csv"),
                 "--json", str(tmp_path / "x.json")]) == 0
    assert main(["train", "--config", cfg, "--epochs", "1", "--samples", "50"]) == 2


def test_compress(tmp_path, capsys):
    state = tmp_path / "ghz.bin"
    save_state(make_ghz(5), state)
    out = tmp_path / "mps.json"
    assert main(["compress", "--state", str(state), "--bond-dim", "2", "--out", str(out),
                 "--csv", str(tmp_path / "b.csv")]) == 0
    meta = json.loads(capsys.readouterr().out)
    assert meta["fidelity"] == pytest.approx(1.0)
    assert MPSState.load(out).bond_dims == [2, 2, 2, 2]
    assert main(["compress", "--state", str(tmp_path / "none.bin"), "--bond-dim", "2",
                 "--out", str(out)]) == 2


def test_analytics(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["analytics", "--kind", "uniform", "--n-values", "1,2", "--epsilon", "0.1",
                 "--csv", str(out), "--json", str(tmp_path / "a.json")]) == 0
    rows = read_csv(out)
    assert rows[0] == ["n_qubits", "gamma2", "gamma3", "gamma4", "variance", "budget"]
    assert [float(v) for v in rows[1][1:4]] == pytest.approx([3, 1.5, 1.2])
    assert rows[1][5] == "180"


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rmkit.cli", "analytics", "--kind", "perfect",
                           "--n-values", "1", "--csv", str(tmp_path / "p.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["kind"] == "perfect"
    proc = subprocess.run([sys.executable, "-m", "rmkit.cli", "estimate"], capture_output=True)
    assert proc.returncode == 2
