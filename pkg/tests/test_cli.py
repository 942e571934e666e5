"""Experiment configs, pipeline dispatch, and reproducibility."""

import json
import os

import pytest

from shjlab.cli import PIPELINES, ExperimentConfig, main, run

SMALL = dict(scenario="eikonal", n_steps=8, n_paths=500, n_paths_bsde=20_000,
             seed_w=11, seed_b=12, levels=(4, 8), eps_ladder=(0.2, 0.1),
             delta_ladder=(0.2, 0.1))


def _small(**over):
    return ExperimentConfig(**{**SMALL, **over})


def test_config_roundtrip():
    cfg = _small()
    clone = ExperimentConfig.from_json(cfg.to_json())
    assert clone == cfg
    assert clone.digest() == cfg.digest()


def test_digest_ignores_key_order_but_not_values():
    cfg = _small()
    payload = json.loads(cfg.to_json())
    shuffled = json.dumps(dict(reversed(list(payload.items()))))
    assert ExperimentConfig.from_json(shuffled).digest() == cfg.digest()
    assert _small(n_paths=501).digest() != cfg.digest()
    assert len(cfg.digest()) == 16


def test_config_rejects_unknown_keys():
    text = json.dumps({**json.loads(_small().to_json()), "n_pths": 7})
    with pytest.raises(ValueError):
        ExperimentConfig.from_json(text)


@pytest.mark.parametrize("bad", [
    dict(n_steps=0),
    dict(n_paths=0),
    dict(T=-1.0),
    dict(seed_b=11),          # must differ from seed_w
    dict(levels=()),
    dict(eps_ladder=(0.2, -0.1)),
    dict(lattice_h=0.0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        _small(**bad)


def test_unknown_pipeline_and_scenario_exit_2(tmp_path):
    code, checks = run(_small(), "transmogrify", str(tmp_path))
    assert code == 2 and checks == {}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(_small().to_json())
    assert main(["--config", str(cfg_path), "--scenario", "nope",
                 "--out", str(tmp_path / "o"), "--pipeline", "simulate"]) == 2


def test_bad_config_file_exits_2(tmp_path):
    missing = tmp_path / "nope.json"
    assert main(["--config", str(missing), "--pipeline", "simulate",
                 "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_steps": "many"}')
    assert main(["--config", str(bad), "--pipeline", "simulate",
                 "--out", str(tmp_path / "o")]) == 2


def test_simulate_pipeline_writes_artifacts(tmp_path):
    cfg = _small()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    out = tmp_path / "out"
    assert main(["--config", str(cfg_path), "--pipeline", "simulate",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["pipeline"] == "simulate"
    assert manifest["config_hash"] == cfg.digest()
    assert manifest["checks"]["terminal_variance"] is True
    first = (out / "simulate_summary.csv").read_text().splitlines()[0]
    assert first == f"# config {cfg.digest()}"
    assert (out / "ensemble_w.bin").exists()


def test_tolerance_scale_can_force_failure(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(_small().to_json())
    assert main(["--config", str(cfg_path), "--pipeline", "simulate",
                 "--out", str(tmp_path / "o"), "--tolerance-scale",
                 "1e-12"]) == 1


def test_value_pipeline_passes_and_reports(tmp_path):
    code, checks = run(_small(), "value", str(tmp_path))
    assert code == 0, checks
    report = json.loads((tmp_path / "value_report.json").read_text())
    assert report["passed"]
    assert report["lipschitz_observed"] <= report["lipschitz_bound"]


def test_seed_flag_rewires_both_streams(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(_small().to_json())
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out, seed in ((out_a, "123"), (out_b, "124")):
        assert main(["--config", str(cfg_path), "--pipeline", "simulate",
                     "--out", str(out), "--seed", seed]) == 0
    rows_a = (out_a / "simulate_summary.csv").read_text().splitlines()[-1]
    rows_b = (out_b / "simulate_summary.csv").read_text().splitlines()[-1]
    assert rows_a != rows_b


def test_worker_count_never_changes_results(tmp_path):
    cfg = _small(ladder_h=0.05)
    outs = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        code, checks = run(cfg, "jhat", str(out), workers=workers)
        assert code == 0, checks
        outs.append((out / "jhat_ladder.csv").read_bytes())
    assert outs[0] == outs[1]


def test_pipeline_registry_is_complete():
    assert set(PIPELINES) == {"simulate", "value", "bsde", "mollify", "jhat",
                              "envelopes", "viscosity-check",
                              "full-uniqueness"}
