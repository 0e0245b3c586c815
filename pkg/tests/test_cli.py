import json
import math
from pathlib import Path

import pytest

from biphoton_cs import cli
from biphoton_cs.cli import (
    ConfigError,
    ExperimentConfig,
    PRESETS,
    main,
    preset,
    replica_seeds,
    run_flux_sweep,
    run_pipeline,
    run_steering,
    split_bases,
)

SMALL = dict(side=8, m=600, sigma_p=2.0, sigma_c=0.1, max_iters=3000)


def numeric_files(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.txt"}


def test_presets_carry_published_sizes():
    sizes = {name: (PRESETS[name]["side"], PRESETS[name]["m"]) for name in PRESETS}
    assert sizes["paper-16x16-position"] == (16, 2500)
    assert sizes["paper-24x24"] == (24, 10000)
    assert sizes["paper-32x32"] == (32, 30000)
    cfg = preset("desk-steering")
    assert cfg.side ** 2 * cfg.pitch_x * cfg.momentum_pitch == pytest.approx(4 * math.pi * math.e)
    assert cfg.sigma_p / cfg.sigma_c == 8


@pytest.mark.parametrize("bad", [dict(m=0), dict(replicas=0), dict(flux=-1.0), dict(tau=0.0),
                                 dict(bases=("spin",)), dict(thresholds=(0.3, 0.1)),
                                 dict(flux_grid=(10.0, 5.0)), dict(colour="red")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(**bad)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("paper-99x99")


def test_seeds_are_functions_of_master_and_replica():
    cfg = ExperimentConfig(bases=("position", "momentum"), master_seed=12)
    s0, s1 = replica_seeds(cfg, 0), replica_seeds(cfg, 1)
    assert s0 == replica_seeds(cfg, 0)
    values = [s["patterns"] for s in (s0["position"], s0["momentum"], s1["position"])]
    values += [s0["position"]["noise"]]
    assert len(set(values)) == len(values)
    assert replica_seeds(cfg.with_overrides(master_seed=13), 0) != s0


def test_digest_ignores_output_dir():
    a = ExperimentConfig(out="x")
    assert a.digest() == ExperimentConfig(out="y").digest()
    assert a.digest() != ExperimentConfig(m=2499).digest()


def test_pipeline_is_deterministic(tmp_path, monkeypatch):
    cfg = ExperimentConfig(name="det", replicas=2, master_seed=4, **SMALL)
    m1 = run_pipeline(cfg.with_overrides(out=str(tmp_path / "a")))
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    m2 = run_pipeline(cfg.with_overrides(out=str(tmp_path / "b")))
    f1, f2 = numeric_files(tmp_path / "a" / "det"), numeric_files(tmp_path / "b" / "det")
    assert f1.keys() == f2.keys() and f1 == f2
    assert m1.to_json() == m2.to_json()
    assert (tmp_path / "a" / "det" / "timings.txt").exists()
    assert "replica-001/report.json" in m1.artifacts


def test_pipeline_outputs(tmp_path):
    cfg = ExperimentConfig(name="one", out=str(tmp_path), **SMALL)
    manifest = run_pipeline(cfg)
    assert manifest.ok and manifest.converged
    root = tmp_path / "one"
    report = json.loads((root / "replica-000" / "report.json").read_text())
    assert report["mi_x"] > 0 and report["mse"] > 0 and report["mi_k"] is None
    meta = json.loads((root / "replica-000" / "recon_position.meta.json").read_text())
    assert set(meta) == {"iterations", "tau_used", "converged", "debiased", "final_objective"}
    summary = json.loads((root / "summary.json").read_text())
    assert summary["position"]["mse"]["n"] == 1


def test_stage_failure_is_recorded(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "solve_bpdn", boom)
    cfg = ExperimentConfig(name="fail", out=str(tmp_path), **SMALL)
    manifest = run_pipeline(cfg)
    assert manifest.failures == [{"replica": 0, "stage": "position/reconstruct",
                                  "error": "RuntimeError: solver exploded"}]
    # artifacts from the stages that finished are kept
    assert (tmp_path / "fail" / "replica-000" / "counts_position.txt").exists()
    assert "replica-000/truth_position.csv" in manifest.artifacts


def test_flux_sweep_csv(tmp_path):
    cfg = ExperimentConfig(name="sw", out=str(tmp_path), **SMALL)
    path = run_flux_sweep(cfg, [100.0, 1e4])
    lines = path.read_text().splitlines()
    assert lines[0] == "flux,mse,beta_margin" and len(lines) == 3


def test_larger_preset_smoke_run(tmp_path):
    # a few iterations only: the point is that every stage runs at 576 pixels per detector
    manifest = run_pipeline(preset("paper-24x24", out=str(tmp_path), max_iters=20))
    assert not manifest.failures and not manifest.converged
    report = json.loads((tmp_path / "paper-24x24" / "replica-000" / "report.json").read_text())
    assert report["mse"] > 0 and report["mi_x"] > 0


def test_steering_requires_matching_configs(tmp_path):
    x, k = split_bases(ExperimentConfig(out=str(tmp_path), **SMALL))
    with pytest.raises(ConfigError):
        run_steering(k, x)
    with pytest.raises(ConfigError):
        run_steering(x, k.with_overrides(side=4))


def test_steering_without_entanglement_is_not_violated(tmp_path):
    # sigma_p = sigma_c: the fitted widths coincide and the fitted capacity is about zero
    cfg = ExperimentConfig(name="flat", out=str(tmp_path), side=8, m=600, sigma_p=1.0,
                           sigma_c=1.0, pitch_x=1.0, pitch_k=4 * math.pi * math.e / 64,
                           max_iters=3000)
    report = run_steering(*split_bases(cfg))
    assert report["bound"] == pytest.approx(4.0)
    assert report["fitted"]["violated"] is False
    assert (tmp_path / "flat" / "steering.json").exists()


def test_main_exit_codes(tmp_path, capsys):
    assert main(["presets"]) == 0
    assert "paper-32x32" in capsys.readouterr().out
    assert main(["run", "--preset", "nope", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--m", "0", "--out", str(tmp_path)]) == 2

    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--name", "ok"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--name", "short",
                 "--max-iters", "2"]) == 3
    assert (tmp_path / "short" / "replica-000" / "report.json").exists()

    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(cfg), "--out", str(blocker)]) == 4
