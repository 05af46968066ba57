import filecmp
import json
import os

import numpy as np
import pytest

from asiplab.cli import main
from asiplab.config import parse_config
from asiplab.errors import ConfigError

AR_CONFIG = {
    "seed": 4242,
    "model": {"family": "ar", "tau": 0.0, "contraction": 0.5},
    "delta": {"nGrid": [0, 1, 2, 4, 6, 8, 10, 12], "replicates": 800,
              "fitLags": [4, 6, 8, 10, 12]},
    "lyapunov": {"length": 500},
}

MATRIX_CONFIG = {
    "seed": 99,
    "model": {
        "family": "matrix-invertible",
        "law": {"kind": "finite-support", "matrices": [[[2.0, 0.0], [0.0, 0.5]]],
                "probs": [1.0]},
    },
    "lyapunov": {"length": 4000, "replicates": 2},
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_minimal():
    cfg = parse_config(json.dumps({"seed": 3, "model": {"family": "ar"}}),
                       task="delta")
    assert cfg.task == "delta"
    assert cfg.seed == 3
    assert cfg.threads == 1
    cfg.model()  # builds


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"seed": 1, "model": {"family": "ar"}, "oops": 1}),
                     task="delta")
    with pytest.raises(ConfigError):
        parse_config(
            json.dumps({"seed": 1, "model": {"family": "ar", "bad": 2}}), task="delta"
        )
    with pytest.raises(ConfigError):
        parse_config(
            json.dumps({"seed": 1, "model": {"family": "ar"},
                        "delta": {"nGrid": [1], "nope": True}}),
            task="delta",
        )


def test_parse_config_task_conflict():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"task": "tail", "seed": 1,
                                 "model": {"family": "ar"}}), task="delta")


def test_parse_config_requires_seed_and_model():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"model": {"family": "ar"}}), task="delta")
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"seed": 1}), task="delta")
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"seed": -1, "model": {"family": "ar"}}), task="delta")


def test_parse_config_matrix_families():
    cfg = parse_config(json.dumps({
        "seed": 5,
        "model": {"family": "matrix-positive",
                  "law": {"kind": "positive-lognormal", "dimension": 3, "sigma": 0.4}},
    }), task="simulate")
    model = cfg.model()
    assert model.dim == 3
    with pytest.raises(ConfigError):
        parse_config(json.dumps({
            "seed": 5,
            "model": {"family": "matrix-positive", "law": {"kind": "orthogonal"}},
        }), task="simulate")


# ---------------------------------------------------------------------------
# CLI runs


def test_cli_delta_artifacts(tmp_path):
    cfg = write_config(tmp_path, AR_CONFIG)
    out = str(tmp_path / "out")
    assert main(["delta", "--config", cfg, "--out", out]) == 0
    for name in ("config.json", "delta.csv", "decay_fit.csv", "summary.txt",
                 "delta_sensitivity.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    header = open(os.path.join(out, "delta.csv")).readline().strip()
    assert header == "n,deltaHat,stderr,replicates"
    summary = dict(
        line.strip().split("=", 1)
        for line in open(os.path.join(out, "summary.txt"))
        if "=" in line
    )
    assert 0.8 <= float(summary["gamma1Hat"]) <= 1.2
    # config echoed verbatim
    assert open(os.path.join(out, "config.json")).read() == open(cfg).read()


def test_cli_lyapunov_deterministic_diag(tmp_path):
    cfg = write_config(tmp_path, MATRIX_CONFIG)
    out = str(tmp_path / "out")
    assert main(["lyapunov", "--config", cfg, "--out", out]) == 0
    summary = dict(
        line.strip().split("=", 1)
        for line in open(os.path.join(out, "summary.txt"))
        if "=" in line
    )
    assert float(summary["lambdaHat"]) == pytest.approx(np.log(2.0), abs=1e-6)


def test_cli_exit_code_2_on_bad_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1, "model": {"family": "ar"}, "zzz": true}')
    assert main(["delta", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["delta", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "o")]) == 2
    notjson = tmp_path / "notjson.json"
    notjson.write_text("{nope")
    assert main(["delta", "--config", str(notjson), "--out", str(tmp_path / "o")]) == 2


def test_cli_exit_code_3_on_numerical_failure(tmp_path):
    # deviations on an AR model is a capability error inside the run
    cfg = write_config(tmp_path, AR_CONFIG)
    assert main(["deviations", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_cli_byte_identical_across_threads_and_reruns(tmp_path):
    cfg = write_config(tmp_path, AR_CONFIG)
    outs = []
    for name, threads in (("a", "1"), ("b", "4"), ("c", "1")):
        out = str(tmp_path / name)
        assert main(["delta", "--config", cfg, "--out", out,
                     "--threads", threads]) == 0
        outs.append(out)
    for other in outs[1:]:
        match, mismatch, errors = filecmp.cmpfiles(
            outs[0], other, os.listdir(outs[0]), shallow=False
        )
        assert not mismatch and not errors, (mismatch, errors)


def test_cli_delta_memoryless_all_zero(tmp_path):
    data = {
        "seed": 12,
        "model": {"family": "ar", "tau": 0.0, "contraction": 1.0},
        "delta": {"nGrid": [1, 2, 4], "replicates": 300},
        "burnIn": 2,
    }
    cfg = write_config(tmp_path, data)
    out = str(tmp_path / "out")
    assert main(["delta", "--config", cfg, "--out", out]) == 0
    rows = open(os.path.join(out, "delta.csv")).read().splitlines()[1:]
    assert all(row.split(",")[1] == "0.0" for row in rows)
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "decayFitSkipped" in summary


def test_cli_simulate_with_aux(tmp_path):
    data = dict(MATRIX_CONFIG)
    data["simulate"] = {"n": 20, "replicates": 2, "aux": ["log_norm", "log_rho"]}
    cfg = write_config(tmp_path, data)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    lines = open(os.path.join(out, "trajectory.csv")).read().splitlines()
    assert lines[0] == "replicate,k,X,S,log_norm,log_rho"
    assert len(lines) == 1 + 2 * 20


def test_cli_plots_flag_writes_svg(tmp_path):
    cfg = write_config(tmp_path, AR_CONFIG)
    out = str(tmp_path / "out")
    assert main(["delta", "--config", cfg, "--out", out, "--plots"]) == 0
    svg = open(os.path.join(out, "delta.svg")).read()
    assert svg.startswith("<svg ") and svg.rstrip().endswith("</svg>")


def test_cli_asip_scheme_echo(tmp_path):
    data = {
        "seed": 7,
        "model": {"family": "ar", "tau": 0.0, "contraction": 0.5},
        "asip": {
            "n": 243, "replicates": 8, "control": True,
            "scheme": {"gamma1": 1.0, "gamma2": 2.0, "c": 0.6931471805599453,
                       "b": 1.632993161855452},
        },
    }
    cfg = write_config(tmp_path, data)
    out = str(tmp_path / "out")
    assert main(["asip", "--config", cfg, "--out", out]) == 0
    summary = dict(
        line.strip().split("=", 1)
        for line in open(os.path.join(out, "summary.txt"))
        if "=" in line
    )
    for key in ("scheme.c1", "scheme.c2", "scheme.alpha", "pHat", "pCiLow",
                "pCiHigh"):
        assert key in summary, key
    scheme_rows = open(os.path.join(out, "scheme.csv")).read().splitlines()
    assert scheme_rows[0] == "k,M_k,m_k,blockStart,blockEnd"
    assert len(scheme_rows) == 1 + 5  # blocks up to 3^5 = 243
    assert summary["controlCoupledBelowIndependent"] == "true"
