import csv
import io
import json

import pytest

from causaljam import cli
from causaljam.bounds import compute_lower_bound
from causaljam.model import ChannelParams


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    return list(csv.reader(io.StringIO(text)))


def test_bounds_single_cell(capsys):
    code, out, _ = run(capsys, "bounds", "--n", "50", "--snr-inv", "0.1")
    assert code == cli.EXIT_OK
    rows = parse_csv(out)
    assert tuple(rows[0]) == cli.TABLE_HEADER
    lower = [r for r in rows[1:] if r[0] == "lower"][0]
    assert float(lower[3]) == pytest.approx(1.6610, abs=5e-3)
    assert lower[3] == f"{compute_lower_bound(ChannelParams.from_ratio(0.1), 50).value:.6g}"
    kinds = {r[0] for r in rows[1:]}
    assert kinds == {"lower", "upper_bar", "upper_tilde", "oblivious"}


def test_bounds_with_slack_rows(capsys):
    code, out, _ = run(capsys, "bounds", "--n", "16", "--snr-inv", "0.3", "--tau", "0.05",
                       "--gamma", "0.05", "--format", "json")
    assert code == 0
    rows = json.loads(out)
    assert {r["bound_kind"] for r in rows} >= {"tau_slack", "gamma_slack"}


def test_table_subset(capsys):
    code, out, _ = run(capsys, "table", "--n", "20", "--snr-inv", "0.2", "0.4")
    assert code == 0
    rows = parse_csv(out)
    assert len(rows) == 1 + 3 * 2


def test_curve_output(tmp_path, capsys):
    path = tmp_path / "curve.csv"
    code, _, _ = run(capsys, "curve", "--n", "20", "--step", "0.1", "--out", str(path))
    assert code == 0
    rows = parse_csv(path.read_text())
    assert tuple(rows[0]) == cli.CURVE_HEADER
    assert [float(r[0]) for r in rows[1:]] == pytest.approx([0.1, 0.2, 0.3, 0.4])
    assert float(rows[1][4]) == pytest.approx(1.7297, abs=1e-4)


@pytest.mark.parametrize("argv", [
    ("table", "--snr-inv"),
    ("bounds", "--n", "10", "--snr-inv", "1.5"),
    ("bounds", "--n", "0", "--snr-inv", "0.2"),
    ("bounds", "--snr-inv", "0.2"),
    ("curve", "--step", "0"),
    ("bounds", "--n", "10", "--snr-inv", "0.2", "--tau", "1.0"),
    ("frobnicate",),
])
def test_config_errors_exit_2(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == cli.EXIT_CONFIG


def test_plotkin_codec_is_config_error(capsys):
    code, _, err = run(capsys, "simulate-codec", "--n", "16", "--snr-inv", "0.5", "--trials", "5")
    assert code == cli.EXIT_CONFIG
    assert "error" in err


def test_no_attack_exit_3(capsys):
    code, _, err = run(capsys, "simulate-codec", "--n", "64", "--snr-inv", "0.1", "--strategy",
                       "attack", "--tau-attack", "0.9", "--trials", "5")
    assert code == cli.EXIT_INFEASIBLE
    assert "infeasible" in err


def test_simulate_codec_none_and_determinism(capsys):
    argv = ("simulate-codec", "--n", "36", "--snr-inv", "0.2", "--trials", "60", "--seed", "3")
    code, out1, _ = run(capsys, *argv)
    assert code == 0
    rep = json.loads(out1)
    assert rep["errors"] == 0 and rep["erasures"] == 0
    assert rep["seed"] == 3
    _, out2, _ = run(capsys, *argv)
    assert out1 == out2


def test_simulate_codec_codebook_round_trip(tmp_path, capsys):
    path = tmp_path / "cb.cjcb"
    base = ("simulate-codec", "--n", "36", "--snr-inv", "0.2", "--trials", "30", "--strategy", "chunk1")
    code, out1, _ = run(capsys, *base, "--save-codebook", str(path))
    assert code == 0 and path.exists()
    code, out2, _ = run(capsys, *base, "--codebook", str(path))
    assert code == 0
    assert json.loads(out1)["errors"] == json.loads(out2)["errors"]


def test_simulate_attack_toy(capsys):
    code, out, _ = run(capsys, "simulate-attack", "--toy", "--trials", "2000", "--seed", "1")
    assert code == 0
    rep = json.loads(out)
    assert rep["confusion_rate"] > 0
    assert rep["config"]["rate"] > rep["config"]["upper_bar"]


def test_toml_config(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('n = [20]\nsnr-inv = [0.3]\nformat = "json"\n')
    code, out, _ = run(capsys, "bounds", "--config", str(cfg))
    assert code == 0
    rows = json.loads(out)
    assert all(r["n"] == 20 for r in rows)
    # flags on the command line win over the file
    code, out, _ = run(capsys, "bounds", "--config", str(cfg), "--format", "csv")
    assert out.startswith("bound_kind,")


def test_toml_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("colour = 3\n")
    code, _, _ = run(capsys, "bounds", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG
    code, _, _ = run(capsys, "bounds", "--config", str(tmp_path / "missing.toml"))
    assert code == cli.EXIT_CONFIG


def test_version(capsys):
    assert cli.main(["--version"]) == 0
