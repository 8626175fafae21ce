import csv
import io
import json

import pytest

from volterrajump.cli import EXIT_CONFIG, EXIT_EXPLOSION, EXIT_HYPOTHESIS, EXIT_OK, main

FRACTIONAL = {"family": "fractional", "params": {"gamma": 0.75}}
POISSON = {"d": 1, "k": 1, "b": "pure_jump",
           "nu": {"kind": "finite_mixture", "components": [{"intensity": "2", "displacement": ["1"]}]}}


@pytest.fixture
def write_config(tmp_path):
    def write(cfg, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps({"schema_version": 1, **cfg}))
        return str(path)
    return write


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("kernel-check", "simulate", "hawkes-scale", "markov-approx", "uniqueness-probe",
                 "martingale-check"):
        assert f"{name}:" in out


def test_unknown_command_is_rejected():
    assert main(["frobnicate"]) != EXIT_OK


def test_kernel_check(write_config, tmp_path):
    cfg = write_config({"experiment": "kernel-check", "kernel": FRACTIONAL, "p": 2, "eta": 0.2, "T": 1})
    out = tmp_path / "out"
    assert main(["run", cfg, "--out-dir", str(out)]) == EXIT_OK
    row, = read_csv(out / "certificate.csv")
    assert float(row["value_singular_integral"]) == pytest.approx(10.0, rel=1e-9)
    assert float(row["value_slobodeckij_integral"]) == pytest.approx(7.79974936236012566, rel=1e-9)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "kernel-check"


def test_zero_triplet_returns_initial_curve(write_config, tmp_path):
    cfg = write_config({"experiment": "simulate", "seed": 3, "replicates": 2, "kernel": FRACTIONAL,
                        "triplet": {"d": 1, "k": 1}, "g0": "1 + t", "T": 1, "steps": 4})
    out = tmp_path / "out"
    assert main(["run", cfg, "--out-dir", str(out)]) == EXIT_OK
    for row in read_csv(out / "paths.csv"):
        assert float(row["x1"]) == pytest.approx(1 + float(row["t"]))


def test_reruns_are_byte_identical(write_config, tmp_path):
    cfg = write_config({"experiment": "simulate", "seed": 3, "replicates": 3, "kernel": FRACTIONAL,
                        "triplet": POISSON, "g0": 0.5, "T": 1, "steps": 8})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["run", cfg, "--out-dir", str(a)]) == EXIT_OK
    assert main(["run", cfg, "--out-dir", str(b), "--threads", "3"]) == EXIT_OK
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()
    ma, mb = (json.loads((x / "manifest.json").read_text()) for x in (a, b))
    ma.pop("created"), mb.pop("created")
    assert ma == mb
    assert main(["run", cfg, "--out-dir", str(c), "--seed", "4"]) == EXIT_OK
    assert (a / "paths.csv").read_bytes() != (c / "paths.csv").read_bytes()


def test_config_errors_exit_2(write_config, capsys):
    bad = write_config({"experiment": "simulate", "kernel": FRACTIONAL, "triplet": {"d": 1, "k": 1},
                        "T": -1, "steps": 4})
    assert main(["run", bad]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["run", write_config({"experiment": "nope"}, "x.json")]) == EXIT_CONFIG
    assert main(["validate", bad]) == EXIT_CONFIG


def test_hypothesis_failure_exits_3(write_config, capsys):
    cfg = write_config({"experiment": "simulate", "seed": 3, "kernel": FRACTIONAL, "T": 1, "steps": 4,
                        "triplet": {"d": 1, "k": 1, "b": "pure_jump",
                                    "nu": {"kind": "hawkes_basis", "intensity": ["x1^2"]}},
                        "growth_checks": [{"condition": "linear_growth", "constant": 2}]})
    assert main(["run", cfg]) == EXIT_HYPOTHESIS
    assert "linear_growth" in capsys.readouterr().err


def test_explosion_exits_4(write_config, tmp_path):
    trip = {"d": 1, "k": 1, "b": "pure_jump",
            "nu": {"kind": "finite_mixture", "components": [{"intensity": "100", "displacement": ["1"]}]}}
    cfg = write_config({"experiment": "simulate", "seed": 1, "replicates": 2, "kernel": FRACTIONAL,
                        "triplet": trip, "T": 1, "steps": 4, "max_events": 5})
    out = tmp_path / "out"
    assert main(["run", cfg, "--out-dir", str(out)]) == EXIT_EXPLOSION
    assert all(r["exploded"] == "true" for r in read_csv(out / "replicates.csv"))


def test_validate_reports_without_running(write_config, capsys):
    cfg = write_config({"experiment": "simulate", "seed": 3, "kernel": FRACTIONAL, "triplet": POISSON,
                        "T": 1, "steps": 4, "growth_checks": [{"condition": "growth_bound", "constant": 10}]})
    assert main(["validate", cfg]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["experiment"] == "simulate"


@pytest.mark.parametrize("cfg,files", [
    ({"experiment": "uniqueness-probe", "seed": 1, "replicates": 5, "kernel": FRACTIONAL,
      "triplet": {"d": 1, "k": 1, "b": ["-x1"], "a": [["1"]]}, "g0": 1.0, "g0_other": 1.1, "T": 1,
      "steps": 50, "lipschitz": [1.0, 0.0]}, None),
    ({"experiment": "martingale-check", "seed": 1, "replicates": 50, "kernel": FRACTIONAL, "triplet": POISSON,
      "T": 1, "steps": 10, "checkpoints": [0.5, 1.0],
      "test_functions": [{"kind": "polynomial_bump", "radius": 3}]}, None),
    ({"experiment": "markov-approx", "seed": 1, "replicates": 20,
      "kernel": {"family": "dampened_fractional", "params": {"gamma": 0.75, "beta": 1}},
      "triplet": {"d": 1, "k": 1, "b": ["-x1"], "a": [["1"]]}, "g0": 1.0, "levels": [5, 10], "T": 1,
      "steps": 20}, None),
])
def test_other_experiments_run(write_config, tmp_path, cfg, files):
    out = tmp_path / "out"
    assert main(["run", write_config(cfg), "--out-dir", str(out)]) == EXIT_OK
    assert (out / "manifest.json").exists()
    assert len(list(out.glob("*.csv"))) >= 1
