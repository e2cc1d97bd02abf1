"""Experiment harness: configs, seed streams, subcommands, exit codes."""

import dataclasses
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from quasimix.cli import (
    EXIT_INSUFFICIENT,
    EXIT_INVALID_CONFIG,
    EXIT_OK,
    ExperimentConfig,
    build_instance,
    load_config,
    main,
    make_base,
    replica_rngs,
)
from quasimix.errors import InvalidInputError, InvalidParameterError


def test_config_roundtrip_and_hash():
    cfg = ExperimentConfig(experiment="mix", n_list=(9, 12), seeds=(0, 1)).validate()
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    other = dataclasses.replace(cfg, horizon=cfg.horizon + 1)
    assert other.config_hash() != cfg.config_hash()


def test_config_validation():
    good = dict(experiment="mix", n_list=(9,), seeds=(0,))
    ExperimentConfig(**good).validate()
    bad_fields = [
        dict(experiment="explode"),
        dict(base_family="hypercube"),
        dict(n_list=()),
        dict(n_list=(2,)),
        dict(seeds=()),
        dict(seeds=(-1,)),
        dict(R=0),
        dict(K=-1),
        dict(laziness=1.0),
        dict(eps_list=(0.0,)),
        dict(trials=0),
        dict(horizon=0),
    ]
    for patch in bad_fields:
        with pytest.raises(InvalidParameterError):
            ExperimentConfig(**{**good, **patch}).validate()


def test_config_from_json_rejects_garbage():
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_json("not json at all {")
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_json("[1, 2]")
    with pytest.raises(InvalidParameterError):
        ExperimentConfig.from_json('{"experiment": "mix", "bogus_knob": 1}')
    with pytest.raises(InvalidParameterError):
        ExperimentConfig.from_json('{"n_list": [9]}')


def test_family_size_checks():
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(experiment="mix", n_list=(50,)).validate()
    ExperimentConfig(
        experiment="mix", base_family="torus", n_list=(20,),
        family_params={"w": 4, "h": 5},
    ).validate()
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(experiment="mix", base_family="torus", n_list=(22,)).validate()
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(
            experiment="mix", base_family="random-regular", n_list=(9,),
            family_params={"d": 3},
        ).validate()
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(
            experiment="mix", base_family="clique-tailed", n_list=(11,),
            family_params={"d": 8},
        ).validate()


def test_make_base_families():
    rng = np.random.default_rng(0)
    assert make_base("triangle", 12, {}, rng).n == 12
    assert make_base("cycle", 10, {}, rng).n == 10
    g = make_base("torus", 20, {"w": 4, "h": 5}, rng)
    assert g.n == 20 and g.degree_bound == 4
    g = make_base("random-regular", 10, {"d": 3}, rng)
    assert np.all(g.degrees() == 3)
    # the requested size counts the clique vertices too
    g = make_base("clique-tailed", 38, {"d": 8}, rng)
    assert g.n == 38


def test_replica_streams_are_independent():
    rngs = replica_rngs(1234, "mix", 48, 0)
    assert set(rngs) == {"graph", "matching", "tree", "walk"}
    draws = {name: r.integers(10**9) for name, r in rngs.items()}
    assert len(set(draws.values())) == 4
    again = replica_rngs(1234, "mix", 48, 0)
    assert all(int(again[k].integers(10**9)) == int(v) for k, v in draws.items())
    other = replica_rngs(1234, "mix", 48, 1)
    assert int(other["matching"].integers(10**9)) != int(draws["matching"])


def test_build_instance_deterministic():
    cfg = ExperimentConfig(experiment="mix", n_list=(48,), seeds=(0,))
    a, _ = build_instance(cfg, 48, 0)
    b, _ = build_instance(cfg, 48, 0)
    assert a.matching.pairs == b.matching.pairs
    c, _ = build_instance(cfg, 48, 1)
    assert c.matching.pairs != a.matching.pairs


def _write_config(tmp_path, name, **kv):
    path = tmp_path / name
    path.write_text(json.dumps(kv), encoding="utf-8")
    return str(path)


def test_generate_writes_instances(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", "--out", str(out)]) == EXIT_OK
    edges = out / "star_n48_seed0.edges"
    matching = out / "star_n48_seed0.matching"
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert edges.exists() and matching.exists()
    # 48 base edges plus 24 matching edges
    assert manifest["row_counts"] == {"star_n48_seed0.edges": 72}
    assert manifest["experiment"] == "generate"
    assert manifest["config_hash"] == load_config("generate", out=str(out)).config_hash()
    assert "48/0" in manifest["replica_seeds"]
    assert manifest["wall_clock_s"] >= 0
    # identical invocations produce identical artifacts
    out2 = tmp_path / "gen2"
    assert main(["generate", "--out", str(out2)]) == EXIT_OK
    assert edges.read_bytes() == (out2 / "star_n48_seed0.edges").read_bytes()
    assert matching.read_bytes() == (out2 / "star_n48_seed0.matching").read_bytes()
    # a different master seed changes the matching
    out3 = tmp_path / "gen3"
    assert main(["generate", "--out", str(out3), "--seed", "7"]) == EXIT_OK
    assert matching.read_bytes() != (out3 / "star_n48_seed0.matching").read_bytes()


def test_mix_csv_and_thread_determinism(tmp_path):
    cfg_path = _write_config(
        tmp_path, "mix.json",
        experiment="mix", n_list=[9, 12], seeds=[0, 1], horizon=1000,
    )
    out1 = tmp_path / "m1"
    out2 = tmp_path / "m2"
    rc1 = main(["mix", "--config", cfg_path, "--out", str(out1)])
    rc2 = main(["mix", "--config", cfg_path, "--out", str(out2), "--threads", "4"])
    assert rc1 == EXIT_OK and rc2 == EXIT_OK
    body = (out1 / "mix.csv").read_text(encoding="utf-8")
    assert body == (out2 / "mix.csv").read_text(encoding="utf-8")
    lines = body.strip().split("\n")
    assert lines[0] == "n,seed,eps,tmix,window"
    # 2 sizes x 2 seeds x 3 thresholds
    assert len(lines) == 13
    for ln in lines[1:]:
        n, s, eps, tmix, window = ln.split(",")
        assert int(n) in (9, 12) and int(s) in (0, 1)
        if float(eps) >= 0.5:
            assert window == ""
        if tmix != "NA":
            assert int(tmix) >= 0


def test_spectral_csv(tmp_path):
    cfg_path = _write_config(
        tmp_path, "spec.json", experiment="spectral", n_list=[9, 12], seeds=[0, 1],
    )
    out = tmp_path / "spec"
    assert main(["spectral", "--config", cfg_path, "--out", str(out)]) == EXIT_OK
    lines = (out / "spectral.csv").read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "n,seed,lambda2,lambda_min,gap_abs"
    assert len(lines) == 5
    for ln in lines[1:]:
        _, _, l2, lm, gap = ln.split(",")
        assert -1.0 <= float(lm) <= float(l2) <= 1.0
        assert 0.0 <= float(gap) <= 1.0


def test_entropy_cli_small(tmp_path):
    cfg_path = _write_config(
        tmp_path, "ent.json",
        experiment="entropy", n_list=[48], seeds=[0], trials=1, horizon=6000,
    )
    out = tmp_path / "ent"
    assert main(["entropy", "--config", cfg_path, "--out", str(out)]) == EXIT_OK
    payload = json.loads((out / "entropy.json").read_text(encoding="utf-8"))
    assert payload["blocks_used"] >= 100
    assert 0.0 < payload["nu_hat"] < 1.0
    assert 0.0 < payload["h_hat"] < 2.0
    times = payload["entropic_times"]["48"]
    assert times["t_entropic"] > 0
    assert times["ci"][0] <= times["t_entropic"] <= times["ci"][1]
    blocks = (out / "entropy_blocks.csv").read_text(encoding="utf-8").strip().split("\n")
    assert blocks[0] == "replica,block_index,sigma_gap,phi_gap,Y"
    assert len(blocks) == 1 + payload["blocks_used"]


def test_entropy_cli_insufficient(tmp_path):
    cfg_path = _write_config(
        tmp_path, "tiny.json",
        experiment="entropy", n_list=[48], seeds=[0], trials=1, horizon=1500,
    )
    out = tmp_path / "tiny"
    assert main(["entropy", "--config", cfg_path, "--out", str(out)]) == EXIT_INSUFFICIENT
    payload = json.loads((out / "entropy.json").read_text(encoding="utf-8"))
    assert payload["degenerate"] is True
    assert "reason" in payload


def test_couple_cli(tmp_path):
    cfg_path = _write_config(
        tmp_path, "couple.json",
        experiment="couple", n_list=[3000], seeds=[0, 1, 2], horizon=60,
    )
    out = tmp_path / "couple"
    assert main(["couple", "--config", cfg_path, "--out", str(out)]) == EXIT_OK
    lines = (out / "couple.csv").read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "seed,n,K,R,t,outcome,cause,steps_coupled,explored,bad_count"
    assert len(lines) == 4
    agg = json.loads((out / "couple_summary.json").read_text(encoding="utf-8"))
    assert agg["runs"] == 3
    assert agg["successes"] == sum("success" in ln for ln in lines[1:])
    assert agg["success_rate"] == agg["successes"] / 3
    assert agg["t"] == 60


def test_verify_cli(tmp_path):
    cfg_path = _write_config(
        tmp_path, "verify.json",
        experiment="verify", n_list=[9, 12, 60], seeds=[0, 1],
    )
    out = tmp_path / "verify"
    assert main(["verify", "--config", cfg_path, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "verify_report.json").read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert report["failures"] == 0
    assert report["instances"] == 6
    assert len(report["lines"]) == 6
    assert sum("sandwich" in ln for ln in report["lines"]) == 4
    assert sum("decomposition" in ln for ln in report["lines"]) == 2


def test_invalid_config_exit_codes(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{ nope", encoding="utf-8")
    assert main(["mix", "--config", str(bad_json)]) == EXIT_INVALID_CONFIG
    wrong = _write_config(tmp_path, "wrong.json", experiment="spectral", n_list=[9])
    assert main(["mix", "--config", wrong]) == EXIT_INVALID_CONFIG
    unknown = _write_config(tmp_path, "unknown.json", experiment="mix", zzz=1)
    assert main(["mix", "--config", unknown]) == EXIT_INVALID_CONFIG
    missing = str(tmp_path / "missing.json")
    assert main(["mix", "--config", missing]) == EXIT_INVALID_CONFIG


def test_load_config_defaults_and_overrides(tmp_path):
    cfg = load_config("entropy")
    assert cfg.experiment == "entropy"
    assert cfg.n_list == (768,) and cfg.trials == 3
    cfg = load_config("mix", seed=99, out=str(tmp_path))
    assert cfg.master_seed == 99 and cfg.out == str(tmp_path)
    path = _write_config(tmp_path, "m.json", experiment="mix", n_list=[9], seeds=[0])
    cfg = load_config("mix", path=path, seed=5)
    assert cfg.n_list == (9,) and cfg.master_seed == 5


def test_console_entrypoint(tmp_path):
    assert shutil.which("quasimix") is not None
    out = tmp_path / "sub"
    res = subprocess.run(
        [sys.executable, "-m", "quasimix", "generate", "--out", str(out), "--summary"],
        capture_output=True, text=True, timeout=300,
    )
    assert res.returncode == 0
    assert "generate: wrote 1 instances" in res.stdout
    assert (out / "star_n48_seed0.edges").exists()
