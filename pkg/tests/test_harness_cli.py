import json
import math

import numpy as np
import pytest

import idt.harness as harness
from idt import TrialConfig, build_construction, generate_log, run_trials
from idt.agents import write_log
from idt.cli import main
from idt.errors import EstimationError, ValidationError
from idt.harness import (
    curve_to_csv,
    lower_bound_demo,
    rate_check,
    rate_curve,
    guaranteed_sample_size,
)

UNIFORM = {"construction": "uniform_posterior", "params": {"c": 0.3}}


def cfg(**kw):
    base = dict(problem=UNIFORM, m=60, trials=50, eps=0.05, delta=0.1, base_seed=0)
    base.update(kw)
    return TrialConfig(**base)


def test_config_validation():
    with pytest.raises(ValidationError):
        cfg(eps=0.0)
    with pytest.raises(ValidationError):
        cfg(delta=1.0)
    with pytest.raises(ValidationError):
        cfg(trials=0)
    with pytest.raises(ValidationError):
        cfg(regime="bayes")
    with pytest.raises(ValidationError):
        TrialConfig.from_dict({**cfg().to_dict(), "colour": "red"})


def test_single_trial():
    report = run_trials(cfg(trials=1))
    assert report.trials == 1
    assert report.failure_frequency in (0.0, 1.0)


def test_no_uncertainty_trials():
    problem = {"construction": "no_uncertainty", "params": {}}
    freqs = []
    for index in (0, 1):
        report = run_trials(cfg(problem=problem, m=100, trials=100, eps=0.1, agent_index=index))
        assert all(w == 1.0 for w in report.widths)
        freqs.append(report.failure_frequency)
    assert max(freqs) >= 0.5


def test_sample_size_formula():
    assert guaranteed_sample_size(0.05, 0.1, 1.0) == 60
    assert guaranteed_sample_size(0.05, 0.05, 1.0) == 74


def test_rate_curve_widths_shrink():
    rows = rate_curve(cfg(trials=200), [10, 20, 40, 80, 160])
    assert [r["m"] for r in rows] == [10, 20, 40, 80, 160]
    for a, b in zip(rows, rows[1:]):
        # widths are bounded by one, so the spread is at most 1/2
        se = 0.5 / math.sqrt(200)
        assert b["mean_width"] <= a["mean_width"] + 2 * se


def test_rate_curve_single_row_matches_run():
    config = cfg(trials=30, base_seed=5)
    (row,) = rate_curve(config, [60])
    s = run_trials(config).summary()
    for key in ("failure_frequency", "mean_abs_error", "mean_width", "standard_error"):
        assert row[key] == s[key]


def test_rate_curve_input_checks():
    with pytest.raises(ValidationError):
        rate_curve(cfg(), [])
    with pytest.raises(ValidationError):
        rate_curve(cfg(), [20, 10])


def test_reports_are_reproducible():
    a = run_trials(cfg(trials=40)).to_json()
    b = run_trials(cfg(trials=40)).to_json()
    assert a == b
    assert "wall_clock_seconds" not in a
    assert "wall_clock_seconds" in run_trials(cfg(trials=2)).to_json(include_timing=True)
    rows = [10, 30]
    assert curve_to_csv(rate_curve(cfg(trials=20), rows)) == curve_to_csv(rate_curve(cfg(trials=20), rows))


def test_threads_do_not_change_reports(monkeypatch):
    serial = run_trials(cfg(trials=40)).to_json()
    monkeypatch.setenv("IDT_THREADS", "4")
    assert run_trials(cfg(trials=40)).to_json() == serial


def test_seeds_never_reused(monkeypatch):
    seen = []
    real = harness.generate_log

    def spy(agent, dist, m, seed):
        seen.append(seed)
        return real(agent, dist, m, seed)

    monkeypatch.setattr(harness, "generate_log", spy)
    rate_curve(cfg(trials=25, base_seed=1000), [10, 20, 40])
    assert len(seen) == 75 and len(set(seen)) == 75


def test_report_metadata_reruns():
    report = run_trials(cfg(problem={"construction": "band_lower_bound", "params": {"eps": 0.05, "p_c": 1.0}}))
    data = json.loads(report.to_json())
    assert data["notes"]["eps"] == 0.05 and data["notes"]["p_c"] == 1.0
    assert len(data["code_digest"]) == 64
    again = run_trials(TrialConfig.from_dict(data["config"]))
    assert again.to_json() == report.to_json()


def test_estimator_errors_are_tallied():
    problem = {"construction": "no_md_smooth", "params": {"eps": 0.05}}
    # the second agent thresholds x2, which the Bayes estimator cannot explain
    report = run_trials(cfg(problem=problem, m=3, trials=60, regime="optimal", agent_index=1))
    counts = report.error_counts
    assert 0 < counts.get("InconsistentLogError", 0) < 60
    assert report.failures >= counts["InconsistentLogError"]
    assert report.summary()["error_counts"] == counts
    with pytest.raises(EstimationError):
        run_trials(cfg(problem=problem, m=500, trials=5, regime="optimal", agent_index=1))


def test_rate_check_flags_rows():
    config = cfg(trials=100, p_c=1.0)
    rows = [{"m": 10, "failure_frequency": 0.9}, {"m": 60, "failure_frequency": 0.05}, {"m": 70, "failure_frequency": 0.5}]
    assert [r["m"] for r in rate_check(config, rows)] == [70]
    assert rate_check(cfg(), rows) == []


def test_lower_bound_demo_no_uncertainty():
    report = lower_bound_demo("no_uncertainty", {}, m=100, trials=50, eps=0.1, delta=0.1)
    assert report["identical_log_fraction"] == 1.0
    assert report["demonstrated"]
    assert len(report["per_agent"]) == 2


# ------------------------------------------------------------------- CLI


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_simulate_and_estimate(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    code, _, _ = run_cli(
        ["simulate", "--construction", "no_md_smooth", "--params", '{"eps": 0.05}', "--agent-index", "1",
         "--m", "2000", "--seed", "3", "--out", str(log)],
        capsys,
    )
    assert code == 0
    assert log.read_text().startswith('{"_meta"')
    code, out, _ = run_cli(
        ["estimate", "--construction", "no_md_smooth", "--params", '{"eps": 0.05}', "--log", str(log),
         "--regime", "known_class"],
        capsys,
    )
    assert code == 0
    res = json.loads(out)
    lo, hi = map(float, res["interval"])
    assert lo < 0.6 <= hi
    code, out, _ = run_cli(
        ["estimate", "--construction", "no_md_smooth", "--params", '{"eps": 0.05}', "--log", str(log),
         "--regime", "unknown_family"],
        capsys,
    )
    assert code == 0 and json.loads(out)["selected_class"] == "H1"


def test_cli_inline_problem(tmp_path, capsys):
    dist = build_construction("uniform_posterior").distribution
    from idt.distribution import distribution_to_dict

    problem = tmp_path / "dist.json"
    problem.write_text(json.dumps(distribution_to_dict(dist)))
    log = tmp_path / "log.jsonl"
    code, _, err = run_cli(
        ["simulate", "--problem", str(problem), "--agent", '{"kind": "optimal_bayes", "c": 0.7}', "--m", "500",
         "--out", str(log)],
        capsys,
    )
    assert code == 0, err
    code, out, _ = run_cli(["estimate", "--problem", str(problem), "--log", str(log)], capsys)
    assert code == 0
    lo, hi = map(float, json.loads(out)["interval"])
    assert lo < 0.7 <= hi


def test_cli_verify_rate(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps(cfg(trials=100, p_c=1.0).to_dict()))
    code, out, _ = run_cli(["verify-rate", "--config", str(config), "--m-values", "20,60"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].split(",")[0] == "m" and len(lines) == 3
    # claiming a density floor that the no-uncertainty problem lacks
    bad = cfg(problem={"construction": "no_uncertainty", "params": {}}, trials=20, eps=0.1, p_c=1.0).to_dict()
    code, _, err = run_cli(["verify-rate", "--config", json.dumps(bad), "--m-values", "60"], capsys)
    assert code == 4 and "rate check failed" in err


def test_cli_lower_bound(capsys):
    code, out, _ = run_cli(
        ["lower-bound", "no_uncertainty", "--m", "50", "--trials", "20", "--eps", "0.1", "--delta", "0.1", "--check"],
        capsys,
    )
    assert code == 0 and json.loads(out)["demonstrated"]
    code, _, _ = run_cli(
        ["lower-bound", "band_lower_bound", "--params", '{"eps": 0.1, "p_c": 1.0}', "--m", "400", "--trials", "20",
         "--eps", "0.1", "--delta", "0.1", "--check"],
        capsys,
    )
    assert code == 4


def test_cli_audit_fairness(tmp_path, capsys):
    bundle = build_construction("two_group", c_a=0.4, c_b=0.6)
    log = tmp_path / "log.jsonl"
    write_log(generate_log(bundle.agents[0], bundle.distribution, 20000, 1), log)
    code, out, _ = run_cli(
        ["audit-fairness", "--construction", "two_group", "--params", '{"c_a": 0.4, "c_b": 0.6}', "--log", str(log)],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["verdict"] == "NotCalibrated"


def test_cli_exit_codes(tmp_path, capsys):
    code, _, err = run_cli(["simulate", "--problem", "{not json", "--m", "5"], capsys)
    assert code == 2 and "validation error" in err
    code, _, _ = run_cli(["simulate", "--construction", "band_lower_bound", "--params", '{"eps": 0.4, "p_c": 1}',
                          "--m", "5"], capsys)
    assert code == 2
    bundle = build_construction("no_md_smooth", eps=0.05)
    log = tmp_path / "log.jsonl"
    write_log(generate_log(bundle.agents[1], bundle.distribution, 500, 0), log)
    code, _, err = run_cli(
        ["estimate", "--construction", "no_md_smooth", "--params", '{"eps": 0.05}', "--log", str(log),
         "--regime", "optimal"],
        capsys,
    )
    assert code == 3 and "estimation error" in err


def test_cli_rejects_log_from_other_distribution(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    bundle = build_construction("uniform_posterior", c=0.3)
    write_log(generate_log(bundle.agents[0], bundle.distribution, 50, 0), log)
    code, _, err = run_cli(
        ["estimate", "--construction", "uniform_posterior", "--params", '{"c": 0.3}', "--log", str(log)], capsys
    )
    assert code == 0, err
    code, _, err = run_cli(["estimate", "--construction", "two_group", "--log", str(log)], capsys)
    assert code == 2 and "different distribution" in err
