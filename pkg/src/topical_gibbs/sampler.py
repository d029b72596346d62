"""Fit orchestration: initialization at the approximate marginal posterior
mode, the full Metropolis-within-Gibbs loop over the topic and logistic
blocks, thinning, and checkpointing.
"""

import enum
import pickle
from dataclasses import dataclass, field, asdict

import numpy as np

from . import chain as chain_io
from . import logistic as lg
from . import mapinit
from . import topics as tp
from .data import screen_variants
from .errors import ConfigError, FitAborted
from .rng import RngStream


class Approximation(enum.Enum):
    """A1A2: NMF plug-in Metropolis ratios with per-iteration frozen sigma
    and the exact pseudo-inverse logistic design (the production sampler).
    A1ONLY: per-proposal sigma recomputation, full-likelihood Metropolis
    ratios, and the plug-in logistic design; an exact sampler for the
    plug-in model, used by the exactness tests."""

    A1A2 = "A1A2"
    A1ONLY = "A1Only"


@dataclass
class FitConfig:
    iterations: int = 20000
    burn_in: int = 1000
    topic_update_every: int = 10
    thin: int = 10
    seed: int = 0
    screen_cap: int = 50
    approximation: Approximation = Approximation.A1A2
    topic: tp.TopicHyper = field(default_factory=tp.TopicHyper)
    logistic: lg.LogisticHyper = field(default_factory=lg.LogisticHyper)
    sigma_floor: float = tp.SIGMA_FLOOR
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-6
    map_cv_folds: int = 5
    map_grid_points: int = 20
    map_max_iter: int = 300

    def __post_init__(self):
        if isinstance(self.approximation, str):
            self.approximation = Approximation(self.approximation)
        if self.iterations < 0 or self.burn_in < 0:
            raise ConfigError("iterations and burn_in must be non-negative")
        if self.thin < 1 or self.topic_update_every < 1:
            raise ConfigError("thin and topic_update_every must be >= 1")
        if self.screen_cap < 0:
            raise ConfigError("screen_cap must be non-negative")

    def to_dict(self):
        out = asdict(self)
        out["approximation"] = self.approximation.value
        return out


def initialize(ds, md, screen, cfg, rng):
    """Initialize at the approximate marginal posterior mode.

    Group-lasso MAP (CV-tuned penalty) for (alpha, beta0, omega) on the
    row-normalized predictors, unsupervised KL-NMF for (Htilde, Wtilde),
    theta = W omega, then the remaining shrinkage parameters from those.
    """
    kept = screen.kept
    x_cols = np.asarray(md.Xnorm[:, kept].todense())
    a_pen = np.hstack([x_cols, md.Vnorm])
    penalty, _, _ = mapinit.select_penalty_cv(
        a_pen, ds.labels, ds.n_classes, rng,
        folds=cfg.map_cv_folds, n_points=cfg.map_grid_points,
        max_iter=cfg.map_max_iter)
    fit = mapinit.fit_group_lasso_map(a_pen, ds.labels, ds.n_classes, penalty,
                                      max_iter=cfg.map_max_iter)
    j0 = len(kept)
    beta0_map = fit.coef[:j0]
    omega_map = fit.coef[j0:]

    htilde, wtilde, _ = mapinit.kl_nmf(md.V.astype(float), cfg.topic.n_topics,
                                       rng, max_iter=cfg.nmf_max_iter,
                                       tol=cfg.nmf_tol)
    theta0 = tp.normalized_topics(wtilde) @ omega_map

    sigma_mode = (tp.SigmaMode.FROZEN if cfg.approximation is Approximation.A1A2
                  else tp.SigmaMode.PER_ITERATION)
    topic_state = tp.init_topic_state(htilde, wtilde, md.V, sigma_mode=sigma_mode)
    sigma_topic = tp.compute_sigma_topic(topic_state, ds.burdens, cfg.sigma_floor)
    topic_state.sigma_topic = sigma_topic
    sigma_obs = lg.observed_sigma(md.Xnorm, kept, cfg.sigma_floor)

    beta0_scaled, theta_scaled = lg.scale_coefficients(
        beta0_map, theta0, sigma_obs, sigma_topic)
    delta = np.vstack([beta0_scaled, theta_scaled])
    tau_sq = np.maximum((delta**2).sum(axis=1) / ds.n_classes, 1e-4)
    logistic_state = lg.LogisticState(
        alpha=fit.alpha.copy(),
        beta0_scaled=beta0_scaled,
        theta_scaled=theta_scaled,
        tau_sq=tau_sq,
        lambda_sq=max(penalty**2, 1e-8),
        sigma_obs=sigma_obs,
    )
    topic_state = tp.draw_Z(topic_state, md.V, rng)
    return topic_state, logistic_state


def _make_record(iteration, topic_state, logistic_state, sigma_topic, accept):
    return chain_io.ChainRecord(
        iteration=iteration,
        alpha=logistic_state.alpha.copy(),
        beta0_scaled=logistic_state.beta0_scaled.copy(),
        theta_scaled=logistic_state.theta_scaled.copy(),
        wtilde=topic_state.Wtilde.copy(),
        zeta=tp.exposures(topic_state.Htilde, topic_state.Wtilde),
        lambda_sq=float(logistic_state.lambda_sq),
        tau_sq=logistic_state.tau_sq.copy(),
        sigma_obs=logistic_state.sigma_obs.copy(),
        sigma_topic=np.asarray(sigma_topic, dtype=float).copy(),
        accept_rate=float(accept),
    )


def _manifest(ds, md, screen, cfg, input_digests):
    return {
        "format_version": chain_io.FORMAT_VERSION,
        "config": cfg.to_dict(),
        "dims": {
            "N": ds.n_tumors, "J0": int(len(screen.kept)),
            "S": cfg.topic.n_topics, "P": md.n_categories,
            "K": ds.n_classes,
            "L": int(len(screen.kept)) + cfg.topic.n_topics,
        },
        "class_names": list(ds.class_names),
        "kept_variant_ids": [ds.variant_ids[j] for j in screen.kept],
        "category_names": list(md.category_names),
        "source": md.source,
        "sigma_categories": md.Vnorm.std(axis=0, ddof=1).tolist(),
        "inputs": dict(input_digests or {}),
        "created_at": "",
    }


def fit(ds, md, cfg, input_digests=None, checkpoint_dir=None):
    """Run the full doubly-augmented Metropolis-within-Gibbs sampler.

    Topic-block updates happen every `topic_update_every`-th iteration;
    the logistic block updates every iteration.  Records at iterations
    t > burn_in with t % thin == 0 are kept.  Any block failure aborts with
    a resumable checkpoint carrying the RNG state.
    """
    screen = screen_variants(ds, cfg.screen_cap)
    rng = RngStream(cfg.seed, 0)
    store = chain_io.ChainStore(manifest=_manifest(ds, md, screen, cfg,
                                                   input_digests))
    topic_state, logistic_state = initialize(ds, md, screen, cfg, rng)
    sigma_topic = topic_state.sigma_topic.copy()
    store.init_record = _make_record(0, topic_state, logistic_state,
                                     sigma_topic, np.nan)
    if cfg.iterations == 0:
        return store
    return _run_loop(ds, md, cfg, screen, rng, topic_state, logistic_state,
                     sigma_topic, store, start_iteration=1,
                     checkpoint_dir=checkpoint_dir)


def _run_loop(ds, md, cfg, screen, rng, topic_state, logistic_state,
              sigma_topic, store, start_iteration, checkpoint_dir):
    plugin = cfg.approximation is Approximation.A1ONLY
    design_path = "plugin" if plugin else "pseudoinverse"
    x_cols = np.asarray(md.Xnorm[:, screen.kept].todense()) \
        / np.maximum(logistic_state.sigma_obs[None, :], cfg.sigma_floor) \
        if len(screen.kept) else np.zeros((ds.n_tumors, 0))
    design = lg.build_augmented_design(md, screen, topic_state,
                                       logistic_state.sigma_obs, sigma_topic,
                                       ds.burdens, path=design_path)
    accept = np.nan
    total = cfg.burn_in + cfg.iterations
    t = start_iteration - 1
    try:
        for t in range(start_iteration, total + 1):
            if t % cfg.topic_update_every == 0:
                topic_state = tp.draw_Z(topic_state, md.V, rng)
                topic_state = tp.draw_W(topic_state, cfg.topic, rng)
                sigma_topic = tp.compute_sigma_topic(topic_state, ds.burdens,
                                                     cfg.sigma_floor)
                topic_state.sigma_topic = sigma_topic
                base = logistic_state.alpha[None, :] \
                    + x_cols @ logistic_state.beta0_scaled
                sup = tp.SupervisedContext(
                    base=base, labels=ds.labels, burdens=ds.burdens,
                    theta_scaled=logistic_state.theta_scaled,
                    sigma_topic=sigma_topic, sigma_floor=cfg.sigma_floor)
                topic_state, accept = tp.sweep_H(topic_state, cfg.topic, sup, rng)
                if plugin:
                    sigma_topic = tp.compute_sigma_topic(topic_state, ds.burdens,
                                                         cfg.sigma_floor)
                    topic_state.sigma_topic = sigma_topic
                design = lg.build_augmented_design(
                    md, screen, topic_state, logistic_state.sigma_obs,
                    sigma_topic, ds.burdens, path=design_path)
            logistic_state = lg.draw_tau_sq(logistic_state, cfg.logistic, rng)
            logistic_state = lg.draw_lambda_sq(logistic_state, cfg.logistic, rng)
            logistic_state = lg.sweep_classes(design, logistic_state,
                                              cfg.logistic, ds.labels, rng)
            if t > cfg.burn_in and t % cfg.thin == 0:
                store.append(_make_record(t, topic_state, logistic_state,
                                          sigma_topic, accept))
    except Exception as exc:  # noqa: BLE001 - checkpoint then re-raise wrapped
        path = _write_checkpoint(checkpoint_dir, t, topic_state,
                                 logistic_state, sigma_topic, store, rng, cfg)
        raise FitAborted(t, path, exc) from exc
    return store


def resume_fit(checkpoint_path, ds, md, checkpoint_dir=None):
    """Continue an aborted fit from its checkpoint, replaying the failed
    iteration.  The checkpoint carries the RNG state, so resumption is
    deterministic: resuming the same checkpoint twice gives identical
    chains.
    """
    payload = load_checkpoint(checkpoint_path)
    cfg = FitConfig(
        topic=tp.TopicHyper(**payload["config"].pop("topic")),
        logistic=lg.LogisticHyper(**payload["config"].pop("logistic")),
        **payload["config"])
    screen = screen_variants(ds, cfg.screen_cap)
    rng = RngStream(cfg.seed, 0)
    rng.set_state(payload["rng_state"])
    store = chain_io.ChainStore(manifest=payload["manifest"])
    store.records = list(payload["records"])
    return _run_loop(ds, md, cfg, screen, rng, payload["topic_state"],
                     payload["logistic_state"], payload["sigma_topic"],
                     store, start_iteration=payload["iteration"],
                     checkpoint_dir=checkpoint_dir)


def _write_checkpoint(checkpoint_dir, iteration, topic_state, logistic_state,
                      sigma_topic, store, rng, cfg):
    if checkpoint_dir is None:
        return "<not written: no checkpoint dir>"
    import os

    os.makedirs(checkpoint_dir, exist_ok=True)
    path = os.path.join(checkpoint_dir, f"checkpoint_{iteration}.pkl")
    payload = {
        "iteration": iteration,
        "topic_state": topic_state,
        "logistic_state": logistic_state,
        "sigma_topic": sigma_topic,
        "records": store.records,
        "manifest": store.manifest,
        "rng_state": rng.state(),
        "config": cfg.to_dict(),
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return pickle.load(fh)
