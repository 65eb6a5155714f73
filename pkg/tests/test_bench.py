import json

import numpy as np
import pytest

from commslide.bench import cli
from commslide.bench.experiment import ExperimentConfig, load_config, replay, run_experiment
from commslide.bench.instances import generate_instance
from commslide.bench.rates import fit_rate


def test_instances_deterministic():
    a = generate_instance("lad_stochastic", 4, 3, 7)
    b = generate_instance("lad_stochastic", 4, 3, 7)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != generate_instance("lad_stochastic", 4, 3, 8).to_dict()


def test_instance_validation():
    with pytest.raises(ValueError):
        generate_instance("lasso", 3, 2, 0)
    with pytest.raises(ValueError):
        generate_instance("lad_convex", 1, 2, 0)
    with pytest.raises(ValueError):
        generate_instance("lad_strongly_convex", 3, 2, 0, mu=0.0)


def test_strongly_convex_instance_sandwich(rng):
    p = generate_instance("lad_strongly_convex", 3, 4, 2)
    assert p.mu == 0.5 and p.C == 1.0
    for a in p.agents:
        X, Y = a.cset.sample(rng, 300), a.cset.sample(rng, 300)
        for x, y in zip(X, Y):
            o = a.objective
            gap = o.value(x) - o.value(y) - o.subgrad(y) @ (x - y)
            assert 0.25 * np.sum((x - y) ** 2) <= gap + 1e-10


def test_finite_sum_cycle_identity():
    p = generate_instance("lad_finite_sum", 2, 3, 5, rows=4)
    o = p.agents[1].objective
    x = np.array([0.1, -0.7, 1.2])
    cyc = np.mean([o.component_subgrad(x, j) for j in range(4)], axis=0)
    np.testing.assert_allclose(cyc, o.subgrad(x), atol=1e-14)
    draws = np.array([[0.0], [0.3], [0.6], [0.9]])
    np.testing.assert_allclose(np.mean([o.noisy_subgrad(x, u) for u in draws], axis=0),
                               o.subgrad(x), atol=1e-14)


def test_stochastic_instance_sigma_defaults_to_M():
    p = generate_instance("lad_stochastic", 3, 2, 1)
    assert p.sigma == pytest.approx(p.M)
    assert generate_instance("lad_stochastic", 3, 2, 1, sigma=0.0).sigma == 0.0


def test_fit_rate_exact_power_laws():
    Ns = [10, 20, 40, 80, 160]
    assert fit_rate([(n, 3.0 / n) for n in Ns]).slope == pytest.approx(-1.0, abs=1e-9)
    f = fit_rate([(n, 0.5 / n**2) for n in Ns])
    assert f.slope == pytest.approx(-2.0, abs=1e-9)
    assert f.r2 == pytest.approx(1.0)


def test_fit_rate_preconditions():
    with pytest.raises(ValueError):
        fit_rate([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        fit_rate([(1, 1.0), (2, 0.0), (4, 0.2)])


def _cfg(tmp_path, **kw):
    base = dict(graph="path:3", problem={"family": "lad_convex", "m": 3, "d": 2, "data_seed": 1},
                algorithm="dpd", N=[5], out=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_minimal_config_writes_three_files(tmp_path):
    code, summaries = run_experiment(_cfg(tmp_path))
    assert code == 0
    cells = [p for p in (tmp_path / "out").iterdir() if p.is_dir()]
    assert len(cells) == 1
    assert sorted(p.name for p in cells[0].iterdir()) == ["manifest.json", "summary.json",
                                                          "trace.csv"]
    s = json.loads((cells[0] / "summary.json").read_text())
    for key in ("comm_rounds", "per_agent_evals", "measured", "bounds", "validation"):
        assert key in s
    assert s["comm_rounds"] == 10


def test_dcs_with_assertions_passes(tmp_path):
    cfg = _cfg(tmp_path, graph="path:5", algorithm="dcs", N=[10],
               problem={"family": "lad_convex", "m": 5, "d": 4, "data_seed": 1})
    code, (s,) = run_experiment(cfg)
    assert code == 0
    assert s["bounds"]["primal"]["measured"] <= s["bounds"]["primal"]["rhs"]
    assert s["bounds"]["feasibility"]["measured"] <= s["bounds"]["feasibility"]["rhs"]
    assert s["bound_assertions"]["passed"] is True


def test_broken_schedule_exits_nonzero(tmp_path):
    code, (s,) = run_experiment(_cfg(tmp_path, tau_scale=0.25))
    assert code != 0
    assert s["status"] == "invalid_schedule"
    failed = [c["name"] for c in s["validation"]["outer"]["conditions"] if not c["passed"]]
    assert "eta_tau_L_k" in failed


def test_halved_tau_is_accepted_at_the_boundary(tmp_path):
    code, (s,) = run_experiment(_cfg(tmp_path, tau_scale=0.5))
    assert code == 0 and s["validation"]["passed"]


def test_replay_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, algorithm="sdcs", N=[3], seeds=[4],
               problem={"family": "lad_stochastic", "m": 3, "d": 2, "data_seed": 1})
    run_experiment(cfg)
    (cell,) = [p for p in (tmp_path / "out").iterdir() if p.is_dir()]
    new = replay(cell / "manifest.json", tmp_path / "again")
    assert (new / "trace.csv").read_bytes() == (cell / "trace.csv").read_bytes()


def test_sdcs_checked_on_seed_mean(tmp_path):
    cfg = _cfg(tmp_path, algorithm="sdcs", N=[4], seeds=[0, 1, 2],
               problem={"family": "lad_stochastic", "m": 3, "d": 2, "data_seed": 1})
    code, summaries = run_experiment(cfg)
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert agg["groups"][0]["seeds"] == 3
    assert all(s["bound_assertions"]["passed"] is None for s in summaries)
    assert code == (0 if agg["groups"][0]["primal_holds"] and agg["groups"][0]["feas_holds"] else 1)


def test_config_files(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('graph = "path:3"\nalgorithm = "dpd"\nN = [4, 8]\n'
                    '[problem]\nfamily = "lad_convex"\nm = 3\nd = 2\ndata_seed = 2\n')
    cfg = load_config(toml)
    assert cfg.N == [4, 8] and cfg.problem["data_seed"] == 2
    js = tmp_path / "c.json"
    js.write_text(json.dumps(cfg.to_dict()))
    assert load_config(js).to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"algorithm": "dpd", "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="admm")


def test_cli_end_to_end(tmp_path, capsys):
    cfg = _cfg(tmp_path, N=[4, 8, 16])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert cli.main(["validate", "--config", str(path)]) == 0
    out = tmp_path / "cli"
    assert cli.main(["run", "--config", str(path), "--out", str(out), "--seed", "0",
                     "--assert-bounds", "on"]) == 0
    capsys.readouterr()
    assert cli.main(["rates", "--glob", str(out / "*" / "summary.json"),
                     "--metric", "feasibility"]) == 0
    fit = json.loads(capsys.readouterr().out.strip())
    assert fit["slope"] < 0 and len(fit["pairs"]) == 3
    man = next(out.glob("*/manifest.json"))
    assert cli.main(["replay", "--manifest", str(man), "--out", str(tmp_path / "r")]) == 0


def test_cli_validate_reports_failure(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(_cfg(tmp_path, tau_scale=0.25).to_dict()))
    assert cli.main(["validate", "--config", str(path)]) != 0
    assert '"passed": false' in capsys.readouterr().out


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("COMMSLIDE_THREADS", "2")
    code, summaries = run_experiment(_cfg(tmp_path, N=[3, 6], seeds=[0, 1]))
    assert code == 0 and len(summaries) == 4
    monkeypatch.setenv("COMMSLIDE_THREADS", "1")
    _, again = run_experiment(_cfg(tmp_path, N=[3, 6], seeds=[0, 1], out=str(tmp_path / "o2")))
    assert [s["measured"] for s in summaries] == [s["measured"] for s in again]
