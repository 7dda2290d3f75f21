import json
import math

import numpy as np
import pytest

from scorekf import NoiseModel, SystemParams, stationary_var_x
from scorekf import harness
from scorekf.filters import kf_gain_schedule
from scorekf.harness import (
    ExperimentConfig,
    FilterFailure,
    Regime,
    classify_regime,
    default_burn_in,
    estimate_mse,
    load_config_file,
    rate_fit_bias,
    rate_fit_mse_gap,
    run_experiment,
    s_from_rule,
)

G, L = NoiseModel.gaussian(), NoiseModel.logistic()
SKEWED = NoiseModel.mixture([0.2, 0.8], [-2.0, 0.5], [0.5, 1.0])


def within_ci(est, target):
    return abs(est.mse - target) <= est.ci_half_width


class TestConfig:
    def test_build_adds_burn_in(self):
        cfg = ExperimentConfig.build(10**4, 100.0, "logistic", measured_steps=1000, replications=3)
        assert cfg.burn_in == default_burn_in(cfg.params) == 20 * 10**4
        assert cfg.horizon == cfg.burn_in + 1000
        assert cfg.tau == 100

    def test_default_burn_in_rounds_up(self):
        assert default_burn_in(SystemParams(100, 0.55)) == 20 * 6

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig.build(100, 1.0, horizon=10, burn_in=10, replications=3)
        with pytest.raises(ValueError):
            ExperimentConfig.build(100, 1.0, horizon=100, burn_in=10, replications=1)
        with pytest.raises(ValueError):
            ExperimentConfig.build(100, 1.0, horizon=100, burn_in=10, replications=3, filters=["ukf"])
        with pytest.raises(ValueError):
            ExperimentConfig.build(100, 1.0, horizon=100, burn_in=10, replications=3, particles=50)

    def test_dict_roundtrip(self):
        cfg = ExperimentConfig.build(
            100, 2.0, {"family": "student_t", "dof": 5}, "logistic", horizon=500, burn_in=50,
            replications=4, filters=["kf", "naive_batch"], seed=7, tau_override=3, gain_mode="stationary",
        )
        again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_from_dict_errors(self):
        with pytest.raises(ValueError, match="unknown"):
            ExperimentConfig.from_dict({"N": 10, "s_N": 1, "replications": 2, "horizon": 5, "colour": 1})
        with pytest.raises(ValueError, match="missing"):
            ExperimentConfig.from_dict({"N": 10, "replications": 2, "horizon": 5})
        with pytest.raises(ValueError, match="horizon"):
            ExperimentConfig.from_dict({"N": 10, "s_N": 1, "replications": 2})

    def test_load_json_and_toml(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"N": 100, "s_N": 2.0, "replications": 3, "measured_steps": 50}))
        (tmp_path / "c.toml").write_text(
            'N = 100\ns_N = 2.0\nreplications = 3\nmeasured_steps = 50\n'
            'obs_noise = { family = "student_t", dof = 5 }\n'
        )
        a = ExperimentConfig.load(tmp_path / "c.json")
        b = ExperimentConfig.load(tmp_path / "c.toml")
        assert a.horizon == b.horizon == default_burn_in(a.params) + 50
        assert b.params.obs_noise == NoiseModel.student_t(5)
        assert load_config_file(tmp_path / "c.json")["N"] == 100


class TestEstimateMse:
    def test_gaussian_kf_matches_riccati(self):
        cfg = ExperimentConfig.build(100, 2.0, measured_steps=5000, replications=40, filters=["kf"], seed=1)
        est = estimate_mse(cfg)[0]
        assert within_ci(est, kf_gain_schedule(cfg.params, 1).P_inf)

    def test_trivial_targets(self):
        cfg = ExperimentConfig.build(
            100, 2.0, "logistic", measured_steps=5000, replications=40,
            filters=["trivial_obs", "trivial_mean"], seed=2,
        )
        res = run_experiment(cfg)
        assert within_ci(res.get("trivial_obs"), 4.0)
        assert within_ci(res.get("trivial_mean"), stationary_var_x(cfg.params))

    def test_estimate_invariants(self):
        cfg = ExperimentConfig.build(100, 2.0, "logistic", measured_steps=2000, replications=10, seed=3)
        for est in estimate_mse(cfg):
            assert est.ci_half_width >= 0
            assert est.mse >= est.bias**2 - 1e-12
            assert est.replications == 10

    def test_reproducible_and_thread_invariant(self):
        cfg = ExperimentConfig.build(
            1000, 10.0, "logistic", measured_steps=3000, replications=12,
            filters=["kf", "gf", "cgf", "naive_batch"], seed=99, particles=100,
        )
        a, b, c = run_experiment(cfg), run_experiment(cfg), run_experiment(cfg, threads=8)
        assert a.estimates == b.estimates == c.estimates
        for k in a.sq_errors:
            np.testing.assert_array_equal(a.sq_errors[k], c.sq_errors[k])

    def test_adding_replications_keeps_earlier_ones(self):
        base = dict(measured_steps=500, filters=["gf"], seed=5)
        few = run_experiment(ExperimentConfig.build(100, 2.0, "logistic", replications=3, **base))
        more = run_experiment(ExperimentConfig.build(100, 2.0, "logistic", replications=6, **base))
        np.testing.assert_array_equal(few.sq_errors["gf"], more.sq_errors["gf"][:3])

    def test_streamed_matches_one_shot(self, monkeypatch):
        from scorekf.estimates import replication_seed
        from scorekf.state_space import propagate

        monkeypatch.setattr(harness, "STREAM_CHUNK", 1000)
        filters = ["kf", "gf", "cgf", "naive_batch", "trivial_obs"]
        cfg = ExperimentConfig.build(100, 3.0, "logistic", horizon=5300, burn_in=1500,
                                     replications=2, filters=filters, seed=4)
        res = run_experiment(cfg)
        p = cfg.params
        rng = np.random.default_rng(replication_seed(4, 1))
        w, v = [], []
        for start in range(0, 5300, 999):  # chunk rounded down to a multiple of tau = 3
            n = min(999, 5300 - start)
            w.append(p.signal_noise.sample(n, rng))
            v.append(p.obs_noise.sample(n, rng))
        traj = propagate(p, np.concatenate(w), np.concatenate(v))
        for mode in filters:
            err = harness.run_filter(p, traj, mode, tau=3 if mode == "naive_batch" else None)[1500:] - traj.x[1500:]
            assert res.sq_errors[mode][1] == pytest.approx(np.mean(err**2), rel=1e-10)
            assert res.errors[mode][1] == pytest.approx(np.mean(err), rel=1e-8, abs=1e-14)

    def test_failure_names_filter_and_seed(self, monkeypatch):
        def boom(*a, **k):
            raise FloatingPointError("nan gain")

        monkeypatch.setattr(harness, "run_filter", boom)
        cfg = ExperimentConfig.build(100, 2.0, measured_steps=100, replications=2, filters=["cgf"])
        with pytest.raises(FilterFailure) as exc:
            run_experiment(cfg)
        assert exc.value.mode == "cgf" and exc.value.seed_index == 0


class TestRegimes:
    @pytest.mark.parametrize(
        "N,s,label",
        [
            (10**4, 100.0, Regime.BALANCED),
            (10**4, 1e4, Regime.NEGLIGIBLE_SNR),
            (10**4, 1e-3, Regime.LARGE_SNR),
            (10**4, 0.5, Regime.LOW_SNR_WINDOW),
        ],
    )
    def test_examples(self, N, s, label):
        lab = classify_regime(SystemParams(N, s))
        assert lab.label is label
        assert lab.s_over_sqrtN == pytest.approx(s / math.sqrt(N))
        assert lab.s_times_sqrtN == pytest.approx(s * math.sqrt(N))

    def test_low_snr_is_balanced_sub_label(self):
        assert classify_regime(SystemParams(10**4, 0.5)).balanced
        assert not classify_regime(SystemParams(10**4, 1e4)).balanced

    def test_cutoff_is_configurable(self):
        assert classify_regime(SystemParams(10**4, 1e3), cutoff=5).label is Regime.NEGLIGIBLE_SNR
        assert classify_regime(SystemParams(10**4, 1e3), cutoff=20).label is Regime.BALANCED

    def test_s_rules(self):
        assert s_from_rule(10**4, "sqrtN") == 100
        assert s_from_rule(10**4, "nquarter") == pytest.approx(10)
        assert s_from_rule(10**4, 3.5) == 3.5
        with pytest.raises(ValueError):
            s_from_rule(10, "cube")


class TestRateFits:
    def test_gf_bias_logistic(self):
        fit = rate_fit_bias(L, [10**3, 10**4, 10**5], "sqrtN", 20, 0, measured_steps=50_000, threads=8)
        assert fit.slope <= -0.5 or fit.inconclusive
        assert len(fit.points) == 3

    def test_gaussian_bias_zero(self):
        fit = rate_fit_bias(G, [10**3, 10**4, 10**5], "sqrtN", 20, 1, measured_steps=50_000, threads=8)
        assert all(abs(p["bias"]) <= p["bias_ci"] for p in fit.points)

    def test_centered_bias_shrinks_for_skewed_noise(self):
        fit = rate_fit_bias(SKEWED, [10**3, 10**4, 10**5], "nquarter", 20, 2, "cgf", measured_steps=50_000, threads=8)
        pts = fit.points
        for a, b in zip(pts, pts[1:]):
            assert abs(b["bias"]) <= abs(a["bias"]) + a["bias_ci"] + b["bias_ci"]

    def test_gf_bias_shrinks_for_skewed_noise(self):
        fit = rate_fit_bias(SKEWED, [10**3, 10**4, 10**5], "nquarter", 20, 2, "gf", measured_steps=50_000, threads=8)
        assert abs(fit.points[0]["bias"]) > fit.points[0]["bias_ci"]
        assert abs(fit.points[-1]["bias"]) < abs(fit.points[0]["bias"])

    def test_mse_gap_scaled_gap_bounded(self):
        fit = rate_fit_mse_gap(L, [10**3, 10**4, 10**5], "sqrtN", 20, 3, measured_steps=50_000, threads=8)
        lo = [max(abs(p["gap_gf"]) - p["mse_gf_ci"], 0) * math.sqrt(p["N"]) for p in fit.points]
        hi = [(abs(p["gap_gf"]) + p["mse_gf_ci"]) * math.sqrt(p["N"]) for p in fit.points]
        assert max(lo) <= 10 * min(hi)

    def test_centered_not_worse_at_quarter_power(self):
        fit = rate_fit_mse_gap(L, [10**3, 10**4, 10**5], "nquarter", 20, 4, measured_steps=50_000, threads=8)
        for p in fit.points:
            assert p["mse_cgf"] <= p["mse_gf"] + p["mse_gf_ci"]

    @pytest.mark.slow
    def test_kf_worse_than_gf_at_sqrtN(self):
        # the excess is ~1.4% of the MSE, so runs must span many correlation times
        fit = rate_fit_mse_gap(L, [10**3, 10**4, 10**5], "sqrtN", 64, 5, threads=8, steps_per_N=100)
        for p in fit.points:
            assert p["kf_minus_gf"] - p["kf_minus_gf_ci"] > 0

    def test_steps_per_N(self):
        fit = rate_fit_bias(L, [10, 20, 40], 1.0, 2, 0, measured_steps=7, steps_per_N=3)
        assert [p["N"] for p in fit.points] == [10, 20, 40]
        assert harness._steps(40, 7, 3) == 120 and harness._steps(40, 7, None) == 7

    def test_N_list_validation(self):
        with pytest.raises(ValueError):
            rate_fit_bias(L, [100, 1000], replications=2)
        with pytest.raises(ValueError):
            rate_fit_bias(L, [1000, 100, 10], replications=2)
