"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  The Geweke and recovery
criteria are the long poles (several minutes each).
"""

import dataclasses
import json
import shutil
import time

import numpy as np
import pytest
from scipy import integrate, stats

from topical_gibbs import chain as chain_io
from topical_gibbs import evaluate as ev
from topical_gibbs import inference as inf
from topical_gibbs import logistic as lg
from topical_gibbs import topics as tp
from topical_gibbs import validation
from topical_gibbs.cli import main as cli_main
from topical_gibbs.data import SimConfig, simulate_dataset
from topical_gibbs.distributions import pg_mean, sample_polya_gamma
from topical_gibbs.rng import RngStream
from topical_gibbs.sampler import FitConfig, fit

from conftest import mc_se

pytestmark = pytest.mark.acceptance


def report(criterion, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# --------------------------------------------------------------------------
def test_criterion_01_distribution_exactness():
    t0 = time.time()
    worst = 0.0
    for i, c in enumerate([0.1, 0.5, 1.0, 2.0, 5.0]):
        draws = sample_polya_gamma(1, c, RngStream(901, i), size=10**6)
        z = abs(draws.mean() - pg_mean(c)) / mc_se(draws)
        worst = max(worst, z)
    pg_time = time.time() - t0
    r = RngStream(902, 0)
    gamma_p = stats.kstest(r.gen.gamma(2.5, 1 / 1.7, 10**5),
                           stats.gamma(a=2.5, scale=1 / 1.7).cdf).pvalue
    ig_p = stats.kstest(r.gen.wald(1.3, 2.1, 10**5),
                        stats.invgauss(mu=1.3 / 2.1, scale=2.1).cdf).pvalue
    counts = r.gen.multinomial(10**5, [0.2, 0.3, 0.5])
    mult_p = stats.chisquare(counts, np.array([0.2, 0.3, 0.5]) * 10**5).pvalue
    ok = worst < 4.0 and pg_time < 30.0 and min(gamma_p, ig_p, mult_p) > 1e-3
    report(1, ok,
           f"PG worst |z|={worst:.2f} (<4) in {pg_time:.1f}s; GOF p-values "
           f"gamma={gamma_p:.3g} ig={ig_p:.3g} multinomial={mult_p:.3g}")


# --------------------------------------------------------------------------
def test_criterion_02_conjugacy_parameters():
    v = np.array([[4, 1], [6, 0]])
    state = tp.init_topic_state(np.array([[1.0, 2.0], [3.0, 4.0]]),
                                np.ones((2, 2)), v)
    state = tp.draw_Z(state, v, RngStream(1, 1))
    hyper = tp.TopicHyper(a_W=0.5, b_W=0.5, n_topics=2)
    shape, rate = tp.w_gamma_params(state, hyper)
    w_ok = np.array_equal(shape, 0.5 + state.z_sum_over_n()) and \
        np.allclose(rate, 0.5 + state.Htilde.sum(axis=0)[:, None], rtol=0,
                    atol=0)

    lstate = lg.LogisticState(
        alpha=np.zeros(2), beta0_scaled=np.array([[0.6, 0.8]]),
        theta_scaled=np.array([[0.0, 0.0], [3.0, 4.0]]),
        tau_sq=np.array([1.0, 2.0, 7.0]), lambda_sq=4.0,
        sigma_obs=np.ones(1))
    zero, ig_mean, lam2 = lg.tau_sq_reciprocal_params(lstate,
                                                      lg.LogisticHyper())
    tau_ok = (list(zero) == [False, True, False]
              and ig_mean[0] == np.sqrt(4.0) / 1.0
              and ig_mean[2] == np.sqrt(4.0) / 5.0
              and lam2 == 4.0)
    shape_l, rate_l = lg.lambda_sq_params(lstate, lg.LogisticHyper())
    lam_ok = (shape_l == 0.01 + 3 * (2 + 1) / 2.0
              and rate_l == 0.01 + 10.0 / 2.0)
    report(2, w_ok and tau_ok and lam_ok,
           "draw_W, draw_tau_sq, draw_lambda_sq parameters match their "
           "conjugate formulas symbolically")


# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_03a_geweke_topic_block():
    t0 = time.time()
    res = validation.geweke_topic_block(n_transitions=200_000, thin=10,
                                        seed=11)
    dt = time.time() - t0
    pvals = res.ks_pvalues()
    ok = min(pvals.values()) > 0.01 and dt < 600
    report("3a", ok, f"unsupervised topic block KS p-values "
           f"{ {k: round(v, 3) for k, v in pvals.items()} } in {dt:.0f}s")


@pytest.mark.slow
def test_criterion_03b_geweke_logistic_block():
    t0 = time.time()
    res = validation.geweke_logistic_block(n_transitions=200_000, thin=10,
                                           seed=12)
    dt = time.time() - t0
    pvals = res.ks_pvalues()
    ok = min(pvals.values()) > 0.01 and dt < 600
    report("3b", ok, f"logistic block KS p-values "
           f"{ {k: round(v, 3) for k, v in pvals.items()} } in {dt:.0f}s")


@pytest.mark.slow
def test_criterion_03c_geweke_full_loop():
    t0 = time.time()
    res = validation.geweke_full_loop(n_transitions=200_000, thin=25,
                                      seed=13)
    dt = time.time() - t0
    pvals = res.ks_pvalues()
    ok = min(pvals.values()) > 0.01 and dt < 600
    report("3c", ok, f"full-loop (A1-only) KS p-values "
           f"{ {k: round(v, 3) for k, v in pvals.items()} } in {dt:.0f}s")


# --------------------------------------------------------------------------
def test_criterion_04_quadrature_oracle():
    t0 = time.time()
    n, ones = 40, 30
    labels = np.array([0] * ones + [1] * (n - ones))
    design = np.ones((n, 1))
    hyper = lg.LogisticHyper(tau0_alpha=10.0)
    state = lg.LogisticState(
        alpha=np.zeros(2), beta0_scaled=np.zeros((0, 2)),
        theta_scaled=np.zeros((0, 2)), tau_sq=np.zeros(0),
        lambda_sq=1.0, sigma_obs=np.zeros(0))
    rng = RngStream(904, 0)
    kept = np.empty(50_000)
    for it in range(52_000):
        state = lg.sweep_classes(design, state, hyper, labels, rng)
        if it >= 2_000:
            kept[it - 2_000] = state.alpha[0] - state.alpha[1]
    gibbs_mean = kept.mean()

    def unnorm(d):
        p = 1.0 / (1.0 + np.exp(-d))
        return stats.norm.pdf(d, 0, np.sqrt(2) * 10.0) \
            * p**ones * (1 - p)**(n - ones)

    z, _ = integrate.quad(unnorm, -15, 15)
    oracle = integrate.quad(lambda d: d * unnorm(d), -15, 15)[0] / z
    dt = time.time() - t0
    ok = abs(gibbs_mean - oracle) < 0.05 and dt < 60
    report(4, ok, f"PG Gibbs mean {gibbs_mean:.4f} vs quadrature "
           f"{oracle:.4f} (|diff| {abs(gibbs_mean - oracle):.4f} < 0.05) "
           f"in {dt:.0f}s")


# --------------------------------------------------------------------------
def test_criterion_05_pseudo_inverse_identities():
    gen = np.random.Generator(np.random.PCG64(905))
    worst_ww = worst_womega = 0.0
    for _ in range(100):
        s = int(gen.integers(1, 11))
        p = int(gen.integers(s + 1, 51))
        wtilde = gen.gamma(1.0, 1.0, (s, p)) + 1e-3
        w = wtilde / wtilde.sum(axis=1, keepdims=True)
        w_pinv = inf.right_pseudo_inverse(w)
        worst_ww = max(worst_ww, np.abs(w @ w_pinv - np.eye(s)).max())
        theta = gen.standard_normal((s, int(gen.integers(2, 6))))
        omega = w_pinv @ theta
        worst_womega = max(worst_womega, np.abs(w @ omega - theta).max())
    ok = worst_ww < 1e-8 and worst_womega < 1e-8
    report(5, ok, f"max |W W^- - I| = {worst_ww:.2e}, "
           f"max |W omega - theta| = {worst_womega:.2e} over 100 fixtures")


# --------------------------------------------------------------------------
def _recovery_inputs(seed=606):
    sim = SimConfig(n_tumors=500, n_classes=3, n_topics=3, n_categories=30,
                    burden_low=100, burden_high=300, separation=6.0)
    return simulate_dataset(sim, RngStream(seed, 0))


@pytest.mark.slow
def test_criterion_06_synthetic_recovery():
    t0 = time.time()
    ds, md, truth = _recovery_inputs()
    cfg = FitConfig(iterations=4000, burn_in=500, topic_update_every=10,
                    thin=10, seed=606, screen_cap=50,
                    topic=tp.TopicHyper(n_topics=3))
    store = fit(ds, md, cfg)
    ident = inf.identify_topics(store, RngStream(607, 0))
    tvs = [min(ev.tv_distance(c, w) for c in ident.centers)
           for w in truth["W"]]
    match = [int(np.argmin([ev.tv_distance(c, w) for c in ident.centers]))
             for w in truth["W"]]
    signs_ok = True
    for k in range(3):
        q = inf.one_vs_rest_query(k, 3, inf.OddsTarget.TOPIC_CLUSTER,
                                  match[k], scale=inf.OddsScale.PER_SD)
        row = inf.posterior_summary(store, ident, [q])[0]
        signs_ok &= row.mean > 0  # truth: topic k favors class k
    dt = time.time() - t0
    ok = max(tvs) <= 0.10 and signs_ok and dt < 600
    report(6, ok, f"recovery TVs {np.round(tvs, 3).tolist()} (<= 0.10), "
           f"one-vs-rest sign pattern {'matches' if signs_ok else 'WRONG'}, "
           f"{dt:.0f}s (< 600)")


# --------------------------------------------------------------------------
def _cv_config(seed):
    return FitConfig(iterations=200, burn_in=50, topic_update_every=10,
                     thin=10, seed=seed, screen_cap=20,
                     topic=tp.TopicHyper(n_topics=3), map_cv_folds=3,
                     map_grid_points=8, map_max_iter=120)


@pytest.mark.slow
def test_criterion_07_predictive_sanity():
    # separation 14 puts the true model's macro PR AUC near 0.96, leaving
    # room for fitting error above the 0.9 bar; class-specific topics have
    # pairwise TV separation well above 0.6 under Dirichlet(0.5) rows
    sim = SimConfig(n_tumors=500, n_classes=3, n_topics=3, n_categories=20,
                    burden_low=100, burden_high=250, separation=14.0)
    ds, md, _ = simulate_dataset(sim, RngStream(707, 0))
    rows = ev.cross_validate(ds, md, _cv_config(71), folds=10,
                             replications=1, rng=RngStream(711, 0))
    macro = [r for r in rows if r.class_name == "__macro__"][0].pr_auc

    shuffled = dataclasses.replace(
        ds, labels=RngStream(712, 0).gen.permutation(ds.labels))
    rows_null = ev.cross_validate(shuffled, md, _cv_config(72), folds=10,
                                  replications=1, rng=RngStream(713, 0))
    per_class = [r for r in rows_null
                 if r.fold_set == "pooled" and not r.class_name.startswith("__")]
    null_gap = max(abs(r.pr_auc - r.null_baseline) for r in per_class)
    ok = macro >= 0.9 and null_gap <= 0.05
    report(7, ok, f"macro PR AUC {macro:.3f} (>= 0.9); label-shuffled "
           f"per-class |AUC - prevalence| max {null_gap:.3f} (<= 0.05)")


# --------------------------------------------------------------------------
def _batch_mean_se(series, n_batches=25):
    series = np.asarray(series, dtype=float)
    usable = (len(series) // n_batches) * n_batches
    batches = series[:usable].reshape(n_batches, -1).mean(axis=1)
    return batches.std(ddof=1) / np.sqrt(n_batches)


@pytest.mark.slow
def test_criterion_08_approximation_consistency():
    sim = SimConfig(n_tumors=8, n_classes=2, n_topics=2, n_categories=4,
                    burden_low=10, burden_high=25, separation=2.0)
    ds, md, _ = simulate_dataset(sim, RngStream(808, 0))
    means, ses = [], []
    for mode, seed in (("A1A2", 81), ("A1Only", 82)):
        cfg = FitConfig(iterations=12_000, burn_in=2_000,
                        topic_update_every=1, thin=5, seed=seed,
                        screen_cap=0, approximation=mode,
                        topic=tp.TopicHyper(n_topics=2, max_retries=2),
                        logistic=lg.LogisticHyper(tau0_alpha=1.0,
                                                  a_lambda=3.0, b_lambda=3.0),
                        map_cv_folds=3, map_grid_points=5, map_max_iter=60)
        store = fit(ds, md, cfg)
        theta = np.array([r.theta_scaled for r in store.records])
        means.append(theta.mean(axis=0))
        ses.append(np.array([[_batch_mean_se(theta[:, i, j])
                              for j in range(theta.shape[2])]
                             for i in range(theta.shape[1])]))
    diff = np.abs(means[0] - means[1])
    bound = 3 * np.sqrt(ses[0]**2 + ses[1]**2)
    ok = bool(np.all(diff <= bound))
    report(8, ok, f"max |mean gap| {diff.max():.4f} vs 3*SE bound "
           f"{bound.min():.4f}..{bound.max():.4f}; per-entry gaps within "
           f"bound: {int((diff <= bound).sum())}/{diff.size}")


# --------------------------------------------------------------------------
def test_criterion_09_cli_determinism(tmp_path):
    sim_dir = tmp_path / "sim"
    assert cli_main(["simulate", "--out", str(sim_dir), "--n", "60",
                     "--classes", "2", "--topics", "2", "--categories", "8",
                     "--seed", "5"]) == 0
    args = ["fit", "--variants", str(sim_dir / "variants.tsv"),
            "--labels", str(sim_dir / "labels.tsv"),
            "--map", str(sim_dir / "map.tsv"),
            "--out", str(tmp_path / "chain"),
            "--iterations", "30", "--burn-in", "5", "--thin", "5",
            "--topic-update-every", "5", "--topics", "2",
            "--screen-cap", "4", "--seed", "17"]
    assert cli_main(args) == 0
    first = chain_io.archive_digest(str(tmp_path / "chain"))
    shutil.rmtree(tmp_path / "chain")
    assert cli_main(args) == 0
    ok = chain_io.archive_digest(str(tmp_path / "chain")) == first
    report(9, ok, "two cmd_fit runs with identical seed/config/data give "
           "byte-identical archives (manifest timestamps normalized)")


# --------------------------------------------------------------------------
def test_criterion_10_configuration_fidelity(tmp_path, capsys):
    defaults = FitConfig()
    cfg_ok = (defaults.iterations == 20000 and defaults.burn_in == 1000
              and defaults.topic_update_every == 10 and defaults.thin == 10
              and defaults.screen_cap == 50
              and defaults.topic.n_topics == 50
              and defaults.topic.a_H == 1.0 and defaults.topic.b_H == 1.0
              and defaults.topic.a_W == 0.5 and defaults.topic.b_W == 0.5
              and defaults.logistic.tau0_alpha == 10.0
              and defaults.logistic.a_lambda == 0.01
              and defaults.logistic.b_lambda == 0.01)

    with pytest.raises(SystemExit):
        cli_main(["fit", "--help"])
    help_text = capsys.readouterr().out
    help_ok = all(tok in help_text for tok in
                  ("20000", "1000", "default 10", "default 50", "default 1",
                   "default 0.5", "0.01"))
    with pytest.raises(SystemExit):
        cli_main(["identify", "--help"])
    help_ok &= "0.8" in capsys.readouterr().out

    sim_dir = tmp_path / "sim"
    assert cli_main(["simulate", "--out", str(sim_dir), "--n", "40",
                     "--classes", "2", "--topics", "2", "--categories", "6",
                     "--seed", "2"]) == 0
    out = tmp_path / "chain"
    assert cli_main(["fit", "--variants", str(sim_dir / "variants.tsv"),
                     "--labels", str(sim_dir / "labels.tsv"),
                     "--map", str(sim_dir / "map.tsv"), "--out", str(out),
                     "--iterations", "0", "--topics", "2"]) == 0
    manifest = json.load(open(out / "manifest.json"))
    m = manifest["config"]
    man_ok = (m["burn_in"] == 1000 and m["thin"] == 10
              and m["topic_update_every"] == 10 and m["screen_cap"] == 50
              and m["topic"]["a_H"] == 1.0 and m["topic"]["a_W"] == 0.5
              and m["logistic"]["tau0_alpha"] == 10.0
              and m["logistic"]["a_lambda"] == 0.01
              and m["iterations"] == 0)
    ok = cfg_ok and help_ok and man_ok
    report(10, ok, "paper-sourced defaults present in FitConfig, --help, "
           "and the emitted manifest")
