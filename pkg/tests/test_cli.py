import csv
import json

import numpy as np
import pytest

from floquet_qtm import cli
from floquet_qtm import config as cf
from floquet_qtm.errors import ConfigError

TINY = {
    "spectral": {"n_harmonics": 9, "final_n_harmonics": 15},
    "controls": {"n_modes": 2, "cutoff": 3.0, "n_pen": 16},
    "optimizer": {"max_iterations": 3, "multistarts": 2},
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# -- config -------------------------------------------------------------------------

def test_defaults_validate():
    cfg = cf.validate_config({})
    assert cfg["spectral"]["n_harmonics"] == 65
    assert cfg["controls"]["flavor"] == "clamped"
    prob = cf.build_problem(cfg)
    assert np.isclose(prob.protocol.period, 2 * np.pi)
    assert np.isclose(prob.protocol.delta, 0.2)


@pytest.mark.parametrize("raw, field", [
    ({"model": {"delta": -1}}, "model.delta"),
    ({"spectral": {"n_harmonics": 64}}, "spectral.n_harmonics"),
    ({"controls": {"flavor": "spline"}}, "controls.flavor"),
    ({"model": {"beta_hot": 3.0}}, "model.beta_hot"),
    ({"bogus": 1}, "<root>"),
    ({"controls": {"n_modes": 2, "params": [0.0, 0.1]}}, "controls.params"),
    ({"sweep": {"variable": "gamma", "values": [1.0]}}, "sweep.variable"),
    ({"merit": {"kind": "composed"}}, "merit.weights"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        cf.validate_config(raw)


def test_multiple_errors_reported_together():
    with pytest.raises(ConfigError) as exc:
        cf.validate_config({"model": {"delta": 0, "gamma": "x"}})
    assert "model.delta" in str(exc.value) and "model.gamma" in str(exc.value)


def test_units():
    cfg = cf.validate_config({"model": {"delta": 2.0}, "cycle": {"period": 0.5}})
    assert np.isclose(cf.period_of(cfg), 0.5 * np.pi)
    cfg = cf.validate_config({"cycle": {"period": 3.0, "units": "absolute"}})
    assert cf.period_of(cfg) == 3.0


def test_sweep_value_substitution():
    cfg = cf.validate_config({"sweep": {"variable": "cutoff", "values": [4.0, 8.0]}})
    point = cf.with_sweep_value(cfg, 4.0)
    assert point["controls"]["cutoff"] == 4.0 and "sweep" not in point
    cf.validate_config(point)


# -- subcommands ------------------------------------------------------------------

def test_bad_config_exits_2(tmp_path, capsys):
    path = write(tmp_path, {"spectral": {"n_harmonics": 10}})
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "spectral.n_harmonics" in capsys.readouterr().err


def test_missing_and_malformed_config_exit_2(tmp_path):
    assert cli.main(["ness", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["ness", "--config", str(bad)]) == 2


def test_negative_seed_exits_2(tmp_path):
    assert cli.main(["run", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_run_writes_record_that_round_trips(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(out),
                     "--seed", "7"]) == 0
    record = json.loads((out / "record.json").read_text())
    protocol = json.loads((out / "protocol.json").read_text())
    assert record["config"]["optimizer"]["seed"] == 7
    again = cf.validate_config(record["config"])
    assert again == record["config"]
    assert len(record["u"]) == 5 and len(protocol["f0"]) == cli.PROTOCOL_SAMPLES
    assert record["diagnostics"]["first_law_residual"] < 1e-10
    assert record["diagnostics"]["max_abs_f0"] <= 0.2 + 1e-12
    # re-evaluating the stored parameters reproduces the stored power
    prob = cf.build_problem(again)
    ev = prob.evaluate(np.array(record["u"]), gradient=False)
    assert ev.ledger.power == pytest.approx(record["P"], rel=1e-12, abs=1e-16)


def test_sweep_is_byte_reproducible(tmp_path):
    cfg = dict(TINY, sweep={"variable": "period", "values": [0.5, 1.0]})
    path = write(tmp_path, cfg)
    texts = []
    for k, jobs in enumerate(("1", "2")):
        out = tmp_path / f"s{k}"
        assert cli.main(["sweep", "--config", path, "--out", str(out), "--jobs", jobs]) == 0
        texts.append((out / "summary.csv").read_bytes())
        assert (out / "point_1" / "record.json").exists()
    assert texts[0] == texts[1]
    rows = list(csv.DictReader(texts[0].decode().splitlines()))
    assert [float(r["sweep_value"]) for r in rows] == [0.5, 1.0]
    assert set(rows[0]) == set(cli.SUMMARY_COLUMNS)
    assert all(r["status"] == "ok" for r in rows)


def test_sweep_without_block_exits_2(tmp_path):
    cfg = cf.validate_config(TINY)
    with pytest.raises(ConfigError):
        cli.run_sweep(cfg, tmp_path)


def test_ness_dump(tmp_path):
    out = tmp_path / "n"
    assert cli.main(["ness", "--config", write(tmp_path, TINY), "--out", str(out)]) == 0
    dump = json.loads((out / "ness.json").read_text())
    rho = np.array(dump["rho_real"]) + 1j * np.array(dump["rho_imag"])
    assert rho.shape == (4, 9)
    trace = rho[0] + rho[3]
    assert trace[4] == pytest.approx(1.0, abs=1e-14)
    assert np.abs(np.delete(trace, 4)).max() < 1e-14
    # the bath switching makes the state time dependent even at constant gap
    assert np.abs(rho[0, 3]) > 1e-4
    assert dump["P"] == 0.0 and dump["J1"] > 0


def test_validate_fails_actionably_when_truncated(tmp_path, capsys):
    cfg = {"spectral": {"n_harmonics": 3, "final_n_harmonics": 3}}
    code = cli.main(["validate", "--config", write(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 4
    assert "increase spectral.n_harmonics" in capsys.readouterr().out


def test_validate_default_passes(tmp_path, capsys):
    assert cli.main(["validate", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out
