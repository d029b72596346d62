"""Joint-distribution validation of the Gibbs kernels on micro models.

Each check runs two simulators of the same joint law over (parameters,
data): the marginal-conditional sampler draws independent (parameter, data)
pairs from prior times likelihood, while the successive-conditional sampler
alternates the package's transition kernels with data redraws from the
likelihood.  If the kernels are exactly stationary the two produce the same
parameter marginals, compared here by two-sample Kolmogorov-Smirnov tests
on scalar statistics.

Where a model conditions on every tumor having positive burden, both
simulators target the joint law conditioned on that event: the marginal
branch rejects whole (parameter, data) pairs, the successive branch rejects
data redraws, and the parameter kernel needs no correction because the
indicator is constant given the data.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import ks_2samp

from . import logistic as lg
from . import topics as tp
from .rng import RngStream


@dataclass
class GewekeResult:
    stats: dict                       # name -> (marginal draws, successive draws)

    def ks_pvalues(self):
        return {name: float(ks_2samp(m, s).pvalue)
                for name, (m, s) in self.stats.items()}

    def min_pvalue(self):
        return min(self.ks_pvalues().values())


def _collect(names):
    return {name: [] for name in names}


# ---------------------------------------------------------------------------
# (a) unsupervised topic block: Z | V -> W | Z,H -> H | Z,W with theta = 0


def geweke_topic_block(n_transitions=200_000, thin=10, seed=11,
                       n=6, p=4, s=2, hyper=None):
    hyper = hyper or tp.TopicHyper(a_H=1.0, b_H=1.0, a_W=1.0, b_W=0.5,
                                   n_topics=s, max_retries=1)
    names = ("h_mean", "h_sq", "w_mean", "w_sq")
    burdens = np.ones(n)              # only a likelihood normalizer; theta = 0
    zero_sup = tp.SupervisedContext(
        base=np.zeros((n, 2)), labels=np.zeros(n, dtype=int), burdens=burdens,
        theta_scaled=np.zeros((s, 2)), sigma_topic=np.ones(s))

    def prior_draw(gen):
        h = gen.gamma(hyper.a_H, 1.0 / hyper.b_H, size=(n, s))
        w = gen.gamma(hyper.a_W, 1.0 / hyper.b_W, size=(s, p))
        return h, w

    def data_draw(gen, h, w):
        return gen.poisson(h @ w)

    def stats_of(h, w):
        return {"h_mean": h.mean(), "h_sq": (h**2).mean(),
                "w_mean": w.mean(), "w_sq": (w**2).mean()}

    marg = _collect(names)
    rng_m = RngStream(seed, 0)
    n_kept = n_transitions // thin
    for _ in range(n_kept):
        h, w = prior_draw(rng_m.gen)
        for k, v in stats_of(h, w).items():
            marg[k].append(v)

    succ = _collect(names)
    rng_s = RngStream(seed, 1)
    h, w = prior_draw(rng_s.gen)
    v_data = data_draw(rng_s.gen, h, w)
    state = tp.init_topic_state(h, w, v_data)
    for t in range(n_transitions):
        state = tp.draw_Z(state, v_data, rng_s)
        state = tp.draw_W(state, hyper, rng_s)
        state, _ = tp.sweep_H(state, hyper, zero_sup, rng_s)
        v_data = data_draw(rng_s.gen, state.Htilde, state.Wtilde)
        new_rows, new_cols = np.nonzero(v_data)
        state = replace(state, cell_rows=new_rows, cell_cols=new_cols,
                        z_counts=np.zeros((len(new_rows), s), dtype=np.int64))
        if (t + 1) % thin == 0:
            for k, v in stats_of(state.Htilde, state.Wtilde).items():
                succ[k].append(v)
    return GewekeResult({k: (np.array(marg[k]), np.array(succ[k]))
                         for k in names})


# ---------------------------------------------------------------------------
# (b) logistic block on a tiny fixed design


def geweke_logistic_block(n_transitions=200_000, thin=10, seed=12,
                          n=10, j0=2, k=3, hyper=None):
    hyper = hyper or lg.LogisticHyper(tau0_alpha=1.0, a_lambda=3.0, b_lambda=3.0)
    design_gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(99)))
    design = np.hstack([np.ones((n, 1)),
                        design_gen.standard_normal((n, j0))])
    l_rows = j0
    names = ("alpha0", "delta00", "delta_sq", "lambda_sq", "tau0")

    def prior_draw(gen):
        lam2 = gen.gamma(hyper.a_lambda, 1.0 / hyper.b_lambda)
        tau2 = gen.gamma((k + 1) / 2.0, 2.0 / lam2, size=l_rows)
        delta = gen.standard_normal((l_rows, k)) * np.sqrt(tau2)[:, None]
        alpha = gen.standard_normal(k) * hyper.tau0_alpha
        return alpha, delta, tau2, lam2

    def data_draw(gen, alpha, delta):
        eta = design @ np.vstack([alpha[None, :], delta])
        pr = np.exp(eta - eta.max(axis=1, keepdims=True))
        pr /= pr.sum(axis=1, keepdims=True)
        u = gen.random((n, 1))
        return (pr.cumsum(axis=1) < u).sum(axis=1)

    def stats_of(alpha, delta, tau2, lam2):
        return {"alpha0": alpha[0], "delta00": delta[0, 0],
                "delta_sq": (delta**2).mean(), "lambda_sq": lam2,
                "tau0": tau2[0]}

    marg = _collect(names)
    rng_m = RngStream(seed, 0)
    for _ in range(n_transitions // thin):
        alpha, delta, tau2, lam2 = prior_draw(rng_m.gen)
        for key, val in stats_of(alpha, delta, tau2, lam2).items():
            marg[key].append(val)

    succ = _collect(names)
    rng_s = RngStream(seed, 1)
    alpha, delta, tau2, lam2 = prior_draw(rng_s.gen)
    labels = data_draw(rng_s.gen, alpha, delta)
    state = lg.LogisticState(
        alpha=alpha, beta0_scaled=delta, theta_scaled=np.zeros((0, k)),
        tau_sq=tau2, lambda_sq=lam2, sigma_obs=np.ones(j0))
    for t in range(n_transitions):
        state = lg.draw_tau_sq(state, hyper, rng_s)
        state = lg.draw_lambda_sq(state, hyper, rng_s)
        state = lg.sweep_classes(design, state, hyper, labels, rng_s)
        labels = data_draw(rng_s.gen, state.alpha, state.beta0_scaled)
        if (t + 1) % thin == 0:
            for key, val in stats_of(state.alpha, state.beta0_scaled,
                                     state.tau_sq, state.lambda_sq).items():
                succ[key].append(val)
    return GewekeResult({k_: (np.array(marg[k_]), np.array(succ[k_]))
                         for k_ in names})


# ---------------------------------------------------------------------------
# (c) full loop in the exactness (A1-only) configuration


def geweke_full_loop(n_transitions=200_000, thin=25, seed=13,
                     n=8, p=4, s=2, k=2,
                     topic_hyper=None, logistic_hyper=None,
                     sigma_floor=tp.SIGMA_FLOOR):
    topic_hyper = topic_hyper or tp.TopicHyper(
        a_H=1.0, b_H=1.0, a_W=1.0, b_W=1.0, n_topics=s, max_retries=1)
    logistic_hyper = logistic_hyper or lg.LogisticHyper(
        tau0_alpha=0.8, a_lambda=4.0, b_lambda=3.0)
    l_rows = s
    names = ("theta_mean", "theta_sq", "lambda_sq", "tau_sum",
             "h_mean", "w_mean")

    def prior_draw(gen):
        lam2 = gen.gamma(logistic_hyper.a_lambda, 1.0 / logistic_hyper.b_lambda)
        tau2 = gen.gamma((k + 1) / 2.0, 2.0 / lam2, size=l_rows)
        theta = gen.standard_normal((l_rows, k)) * np.sqrt(tau2)[:, None]
        alpha = gen.standard_normal(k) * logistic_hyper.tau0_alpha
        h = gen.gamma(topic_hyper.a_H, 1.0 / topic_hyper.b_H, size=(n, s))
        w = gen.gamma(topic_hyper.a_W, 1.0 / topic_hyper.b_W, size=(s, p))
        return {"alpha": alpha, "theta": theta, "tau2": tau2, "lam2": lam2,
                "h": h, "w": w}

    def data_draw(gen, params, max_attempts=100_000):
        """(V, burdens, labels) from the likelihood given all-positive burdens."""
        for _ in range(max_attempts):
            v_data = gen.poisson(params["h"] @ params["w"])
            burdens = v_data.sum(axis=1)
            if np.all(burdens >= 1):
                break
        else:
            raise RuntimeError("burden rejection sampler stalled")
        w_rowsums = params["w"].sum(axis=1)
        sigma = tp.plugin_sigma(params["h"], w_rowsums, burdens, sigma_floor)
        cols = tp.plugin_columns(params["h"], w_rowsums, burdens, sigma)
        eta = params["alpha"][None, :] + cols @ params["theta"]
        pr = np.exp(eta - eta.max(axis=1, keepdims=True))
        pr /= pr.sum(axis=1, keepdims=True)
        u = gen.random((n, 1))
        labels = (pr.cumsum(axis=1) < u).sum(axis=1)
        return v_data, burdens, labels

    def joint_draw(gen):
        """One (params, data) pair from the burden-conditioned joint."""
        while True:
            params = prior_draw(gen)
            v_data = gen.poisson(params["h"] @ params["w"])
            burdens = v_data.sum(axis=1)
            if np.all(burdens >= 1):
                break
        w_rowsums = params["w"].sum(axis=1)
        sigma = tp.plugin_sigma(params["h"], w_rowsums, burdens, sigma_floor)
        cols = tp.plugin_columns(params["h"], w_rowsums, burdens, sigma)
        eta = params["alpha"][None, :] + cols @ params["theta"]
        pr = np.exp(eta - eta.max(axis=1, keepdims=True))
        pr /= pr.sum(axis=1, keepdims=True)
        u = gen.random((n, 1))
        labels = (pr.cumsum(axis=1) < u).sum(axis=1)
        return params, v_data, burdens, labels

    def stats_of(params):
        return {"theta_mean": params["theta"].mean(),
                "theta_sq": (params["theta"]**2).mean(),
                "lambda_sq": params["lam2"],
                "tau_sum": params["tau2"].sum(),
                "h_mean": params["h"].mean(),
                "w_mean": params["w"].mean()}

    marg = _collect(names)
    rng_m = RngStream(seed, 0)
    for _ in range(n_transitions // thin):
        params, _, _, _ = joint_draw(rng_m.gen)
        for key, val in stats_of(params).items():
            marg[key].append(val)

    succ = _collect(names)
    rng_s = RngStream(seed, 1)
    params, v_data, burdens, labels = joint_draw(rng_s.gen)
    topic_state = tp.init_topic_state(params["h"], params["w"], v_data,
                                      sigma_mode=tp.SigmaMode.PER_ITERATION)
    logi_state = lg.LogisticState(
        alpha=params["alpha"], beta0_scaled=np.zeros((0, k)),
        theta_scaled=params["theta"], tau_sq=params["tau2"],
        lambda_sq=params["lam2"], sigma_obs=np.zeros(0))
    for t in range(n_transitions):
        # topic block (A1-only: per-proposal sigma, full-likelihood ratio)
        topic_state = tp.draw_Z(topic_state, v_data, rng_s)
        topic_state = tp.draw_W(topic_state, topic_hyper, rng_s)
        sup = tp.SupervisedContext(
            base=np.broadcast_to(logi_state.alpha, (n, k)).copy(),
            labels=labels, burdens=burdens,
            theta_scaled=logi_state.theta_scaled,
            sigma_topic=topic_state.sigma_topic, sigma_floor=sigma_floor)
        topic_state, _ = tp.sweep_H(topic_state, topic_hyper, sup, rng_s)
        w_rowsums = topic_state.w_rowsums()
        sigma = tp.plugin_sigma(topic_state.Htilde, w_rowsums, burdens,
                                sigma_floor)
        topic_state.sigma_topic = sigma
        # logistic block on the plug-in design
        design = np.hstack([
            np.ones((n, 1)),
            tp.plugin_columns(topic_state.Htilde, w_rowsums, burdens, sigma),
        ])
        logi_state = lg.draw_tau_sq(logi_state, logistic_hyper, rng_s)
        logi_state = lg.draw_lambda_sq(logi_state, logistic_hyper, rng_s)
        logi_state = lg.sweep_classes(design, logi_state, logistic_hyper,
                                      labels, rng_s)
        # data redraw under the burden conditioning
        cur = {"alpha": logi_state.alpha, "theta": logi_state.theta_scaled,
               "tau2": logi_state.tau_sq, "lam2": logi_state.lambda_sq,
               "h": topic_state.Htilde, "w": topic_state.Wtilde}
        v_data, burdens, labels = data_draw(rng_s.gen, cur)
        new_rows, new_cols = np.nonzero(v_data)
        topic_state = replace(topic_state, cell_rows=new_rows,
                              cell_cols=new_cols,
                              z_counts=np.zeros((len(new_rows), s),
                                                dtype=np.int64))
        if (t + 1) % thin == 0:
            for key, val in stats_of(cur).items():
                succ[key].append(val)
    return GewekeResult({k_: (np.array(marg[k_]), np.array(succ[k_]))
                         for k_ in names})
