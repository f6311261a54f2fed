import csv
import json
import math

import numpy as np
import pytest

from nopo.cli import EXIT_CONFIG, EXIT_OK, RESULT_COLUMNS, fmt, main, metadata_path
from nopo.config import load_config, parse_config
from nopo.errors import ConfigError

BASE = """
[model]
gamma_p = 50.0
big_g = 0.05

[network]
nodes = {nodes}
coupling_j = {j}

[run]
engine = "{engine}"
p = {p}
dt = 0.01
ramp_time = 2.0
average_window = 2.0
n_traj = 40
seed = 7
"""


def write_cfg(tmp_path, name="cfg.toml", extra="", **kw):
    vals = dict(nodes=1, j=0.0, engine="tpsde", p=1.5)
    vals.update(kw)
    path = tmp_path / name
    path.write_text(BASE.format(**vals) + extra, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# configuration


def test_defaults_and_derived_gain():
    cfg = parse_config({"model": {"gamma_p": 50.0, "gamma_i": 50.0, "kappa": 1.0}})
    par = cfg.params()
    assert par.big_g == pytest.approx(1.0 / 50.0)
    assert cfg.run["engine"] == "tpsde" and cfg.network["nodes"] == 1
    assert par.p == pytest.approx(1.0)


def test_kappa_filled_from_gain():
    cfg = parse_config({"model": {"gamma_p": 50.0, "big_g": 0.08, "gamma_i": 2.0}})
    assert cfg.params().kappa == pytest.approx(0.4)


@pytest.mark.parametrize("doc, fragment", [
    ({"model": {"gamma_p": 50.0, "big_g": 0.05, "gama_p": 1}}, "gama_p"),
    ({"model": {"gamma_p": 50.0, "big_g": 0.05}, "runn": {}}, "runn"),
    ({"model": {"big_g": 0.05}}, "gamma_p"),
    ({"model": {"gamma_p": "fast", "big_g": 0.05}}, "gamma_p"),
    ({"model": {"gamma_p": 50.0, "big_g": 0.05}, "run": {"n_traj": 2.5}}, "n_traj"),
    ({"model": {"gamma_p": 50.0, "big_g": 0.05}, "run": {"engine": "rk4"}}, "rk4"),
    ({"model": {"gamma_p": 50.0, "big_g": 0.05}, "network": {"nodes": 3}}, "nodes"),
    ({"model": {"gamma_p": -1.0, "big_g": 0.05}}, "gamma_p"),
])
def test_invalid_documents_name_the_offender(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(doc)


def test_override_and_round_trip():
    cfg = parse_config({"model": {"gamma_p": 50.0, "big_g": 0.05}})
    new = cfg.override(run__p=2.5, run__engine="twsde")
    assert new.run["p"] == 2.5 and new.run["engine"] == "twsde"
    assert parse_config(new.to_dict()) == new


def test_json_and_toml_agree(tmp_path):
    a = load_config(write_cfg(tmp_path))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(a.to_dict()), encoding="utf-8")
    assert load_config(path) == a


def test_pair_coupling_in_units_of_signal_rate():
    cfg = parse_config({"model": {"gamma_p": 50.0, "big_g": 0.05, "gamma_s": 2.0},
                        "network": {"nodes": 2, "coupling_j": 1.5}})
    assert cfg.network_config().coupling_j == pytest.approx(3.0)


# ---------------------------------------------------------------------------
# command line


def test_cli_rejects_unknown_key(tmp_path, capsys):
    path = write_cfg(tmp_path, extra="\n[output]\ngama_p = 1\n")
    assert main(["run", str(path)]) == EXIT_CONFIG
    assert "gama_p" in capsys.readouterr().err


def test_fmt_is_locale_free_and_lossless():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(fmt(x)) == x
    assert fmt(float("nan")) == "nan" and fmt(3) == "3" and fmt(None) == ""


def test_run_writes_csv_and_metadata_and_replays(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["run", str(write_cfg(tmp_path)), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert list(rows[0]) == RESULT_COLUMNS
    assert rows[-1]["time"] == "steady"
    meta = json.loads(metadata_path(out).read_text())
    assert meta["seed"] == 7 and "numpy" in meta["versions"]
    # the metadata document is itself a configuration reproducing the run
    out2 = tmp_path / "b.csv"
    assert main(["run", str(metadata_path(out)), "--out", str(out2)]) == EXIT_OK
    assert out.read_bytes() == out2.read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", str(cfg), "--out", str(a)])
    main(["run", str(cfg), "--out", str(b), "--seed", "8"])
    assert read_csv(a)[-1]["n_mean"] != read_csv(b)[-1]["n_mean"]


def test_sweep_of_one_point_matches_single_run(tmp_path):
    from nopo.runner import point_seed
    sweep_cfg = write_cfg(tmp_path, "s.toml", extra='\n[sweep]\naxis = "p"\nvalues = [1.5]\n')
    out = tmp_path / "s.csv"
    assert main(["sweep", str(sweep_cfg), "--out", str(out)]) == EXIT_OK
    single = tmp_path / "r.csv"
    seed = point_seed(7, 0)
    assert main(["run", str(write_cfg(tmp_path)), "--out", str(single), "--seed", str(seed)]) == 0
    s, r = read_csv(out)[0], read_csv(single)[-1]
    for key in ("n_mean", "g2", "q", "hz1n"):
        assert s[key] == r[key]
    meta = json.loads(metadata_path(out).read_text())
    assert meta["point_seeds"] == [seed]


def test_analytic_command(tmp_path):
    cfg = write_cfg(tmp_path, nodes=2, j=9.0, extra='\n[sweep]\naxis = "p"\nvalues = [0.5, 5.0]\n')
    out = tmp_path / "an.csv"
    assert main(["analytic", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert [float(r["p"]) for r in rows] == [0.5, 5.0]
    assert rows[0]["q_linearized"] == "nan"
    assert float(rows[1]["q_linearized"]) == pytest.approx(-0.375)
    assert float(rows[1]["hz1n_linearized"]) == pytest.approx(7 / 36 - 1 / 16)


def test_fock_pair_run_writes_slices(tmp_path):
    cfg = write_cfg(tmp_path, nodes=2, j=1.0, engine="fock-pair", p=0.5)
    text = cfg.read_text().replace("dt = 0.01", "dt = 0.002").replace("n_traj = 40\n", "")
    text = text.replace("[run]", "[run]\ncutoff_signal = 14")
    cfg.write_text(text)
    out = tmp_path / "f.csv"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    ex = tmp_path / "f_exchange_slice.csv"
    assert ex.exists() and (tmp_path / "f_pair_slice.csv").exists()
    mat = np.array([[complex(v) for v in line] for line in csv.reader(open(ex))])
    assert mat.shape == (15, 15)
    np.testing.assert_allclose(mat, mat.conj().T, atol=1e-12)
