"""
Statistical acceptance runs at the reference operating point
(b = 4, delta_fp = 0.7, delta_fn = 1, beta = 0.3, T = 10^4).

These replay tens of thousands of rounds per seed and are marked slow;
run them with ``pytest -m slow``.
"""

import os

import numpy as np
import pandas as pd
import pytest

from Offloader.data.generate import MixtureSpec, gen_calibrated, gen_mixture, uniform_law
from Offloader.main import main
from Offloader.processing.baselines import (
    SingleThresholdPolicy,
    offline_best_single_threshold,
    offline_best_two_threshold,
)
from Offloader.processing.calibrated import optimal_band, population_cost
from Offloader.processing.core import CostModel, FixedBeta, resolve_betas
from Offloader.processing.experiments import asymmetric_costs
from Offloader.processing.h2t2 import H2T2Policy, expert_count, regret_bound, tuned_params
from Offloader.processing.harness import loglog_slope, run

pytestmark = pytest.mark.slow

BITS = 4
HORIZON = 10_000
SEEDS = range(20)


class TestCalibratedConvergence:
    """On calibrated data the learner approaches the closed-form rule."""

    def test_average_cost_and_band(self, costs):
        target = population_cost(uniform_law(BITS), BITS, 0.3, costs)
        band = optimal_band(0.3, costs)
        epsilon, tuned_eta = tuned_params(BITS, HORIZON)

        fast_costs, tuned_costs, close = [], [], 0
        for seed in SEEDS:
            dataset = gen_calibrated(uniform_law(BITS), HORIZON, BITS, seed)
            policy = H2T2Policy(BITS, costs, eta=1.0, epsilon=epsilon)
            fast_costs.append(run(policy, dataset, costs, seed).total_loss / HORIZON)
            theta_l, theta_u = policy.grid.mean_thresholds()
            if abs(theta_l - band.lower) * 2 ** BITS <= 2 and abs(theta_u - band.upper) * 2 ** BITS <= 2:
                close += 1

            tuned = H2T2Policy(BITS, costs, eta=tuned_eta, epsilon=epsilon)
            tuned_costs.append(run(tuned, dataset, costs, seed).total_loss / HORIZON)

        assert np.mean(fast_costs) <= 1.10 * target
        assert np.mean(tuned_costs) <= 1.20 * target
        assert close >= 16


class TestSublinearRegret:
    """Mean regret grows slower than linearly and stays under its bound."""

    def test_regret_slope(self, costs):
        horizons = [2_500, 5_000, 10_000, 20_000]
        mean_regrets = []
        for horizon in horizons:
            epsilon, eta = tuned_params(BITS, horizon)
            bound = regret_bound(eta, epsilon, horizon, 1.0, expert_count(BITS))
            regrets = []
            for seed in SEEDS:
                dataset = gen_calibrated(uniform_law(BITS), horizon, BITS, seed)
                betas = resolve_betas(dataset, costs, seed)
                optimum = offline_best_two_threshold(dataset, costs, betas)
                trace = run(H2T2Policy(BITS, costs, eta, epsilon), dataset, costs, seed, betas)
                regrets.append(trace.total_loss - optimum.loss)
            mean_regrets.append(float(np.mean(regrets)))
            assert mean_regrets[-1] <= bound

        slope = loglog_slope(list(zip(horizons, mean_regrets)))
        assert slope <= 0.85


class TestTwoThresholdsBeatOne:
    """With the decision boundary off 0.5, a second threshold pays off."""

    SPEC = MixtureSpec(mean1=0.85, sd1=0.1, mean0=0.55, sd0=0.1)

    def test_offline_gap(self, costs):
        gaps = []
        for seed in range(10):
            dataset = gen_mixture(self.SPEC, HORIZON, BITS, seed)
            betas = resolve_betas(dataset, costs, seed)
            two = offline_best_two_threshold(dataset, costs, betas)
            single = offline_best_single_threshold(dataset, costs, betas)
            gaps.append((single.loss - two.loss) / HORIZON)
        assert np.mean(gaps) > 2 * np.std(gaps, ddof=1)

    def test_learner_beats_best_single_threshold(self, costs):
        epsilon, _ = tuned_params(BITS, HORIZON)
        learned, single_costs = [], []
        for seed in range(5):
            dataset = gen_mixture(self.SPEC, HORIZON, BITS, seed)
            betas = resolve_betas(dataset, costs, seed)
            single = offline_best_single_threshold(dataset, costs, betas)
            trace = run(H2T2Policy(BITS, costs, 1.0, epsilon), dataset, costs, seed, betas)
            learned.append(trace.total_loss / HORIZON)
            single_costs.append(single.loss / HORIZON)
        assert np.mean(learned) < np.mean(single_costs)


class TestBetaSweep:
    """Where the best pair beats both fixed baselines, so does the learner."""

    def test_learner_beats_baselines(self, tmp_path):
        out = str(tmp_path / "out")
        code = main([
            "sweep-beta", "--out", out, "--seeds", "3", "--workers", "2",
            "--set", "samples=10000",
            "--set", "mean1=0.85", "--set", "sd1=0.1", "--set", "mean0=0.55", "--set", "sd0=0.1",
            "--set", "beta_grid=0.2,0.3,0.4,0.5,0.6",
            "--set", "policies=no-offload,full-offload,offline-two,h2t2",
        ])
        assert code == 0
        table = pd.read_csv(os.path.join(out, "sweep_beta.csv"))
        table["seed"] = table["seed"].astype(str)
        stats = table[table["seed"].isin(["mean", "sd"])].pivot_table(
            index=["beta", "policy_id"], columns="seed", values="avg_cost"
        )

        checked = 0
        for beta in (0.2, 0.3, 0.4, 0.5, 0.6):
            best = stats.loc[(beta, "offline-two"), "mean"]
            learner = stats.loc[(beta, "h2t2")]
            for baseline in ("full-offload", "no-offload"):
                other = stats.loc[(beta, baseline)]
                if best < other["mean"]:
                    assert learner["mean"] <= other["mean"] + 2 * (learner["sd"] + other["sd"])
                    checked += 1
        assert checked == 10


class TestSymmetricCostLearners:
    """With delta_fp = delta_fn both learners settle on the same rule."""

    def test_h2t2_close_to_single_threshold(self):
        costs = CostModel(beta_source=FixedBeta(0.3), **asymmetric_costs(1.0, 1.0))
        epsilon, _ = tuned_params(BITS, HORIZON)
        two, single = [], []
        for seed in range(5):
            dataset = gen_calibrated(uniform_law(BITS), HORIZON, BITS, seed)
            two.append(run(H2T2Policy(BITS, costs, 1.0, epsilon), dataset, costs, seed).total_loss / HORIZON)
            single.append(run(SingleThresholdPolicy(BITS, costs, 1.0, epsilon), dataset, costs, seed)
                          .total_loss / HORIZON)
        assert abs(np.mean(two) - np.mean(single)) <= 0.03
