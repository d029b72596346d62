"""Gibbs sub-sweep over the hierarchical group-lasso multinomial-logistic
layer: shrinkage draws for tau^2 and lambda^2, the augmented design build,
and per-class Polya-Gamma + multivariate-normal coefficient draws.

The sampler works on the scaled coefficients beta0-tilde = sigma_obs * beta0
and theta-tilde = sigma_topic * theta, under which the group-lasso prior is
standard; descaling happens post hoc.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, NumericalError
from .distributions import sample_polya_gamma, sample_mvn_precision
from .topics import SIGMA_FLOOR, plugin_columns


@dataclass
class LogisticHyper:
    tau0_alpha: float = 10.0         # prior sd of the intercepts
    a_lambda: float = 0.01
    b_lambda: float = 0.01
    zero_norm_threshold: float = 1e-12

    def __post_init__(self):
        if min(self.tau0_alpha, self.a_lambda, self.b_lambda,
               self.zero_norm_threshold) <= 0:
            raise ConfigError("logistic hyperparameters must be positive")


@dataclass
class LogisticState:
    """Scaled multinomial-logistic parameters and their shrinkage variances.

    delta stacks beta0_scaled rows first, theta_scaled rows after; L rows
    total with L = J0 + S.
    """

    alpha: np.ndarray                # K
    beta0_scaled: np.ndarray         # J0 x K
    theta_scaled: np.ndarray         # S x K
    tau_sq: np.ndarray               # L
    lambda_sq: float
    sigma_obs: np.ndarray            # J0, data-fixed column sds of screened Xnorm
    gamma_pg: np.ndarray | None = None   # transient N x K PG draws

    @property
    def n_classes(self):
        return self.alpha.shape[0]

    @property
    def n_screened(self):
        return self.beta0_scaled.shape[0]

    @property
    def n_rows(self):
        return self.beta0_scaled.shape[0] + self.theta_scaled.shape[0]

    def delta(self):
        return np.vstack([self.beta0_scaled, self.theta_scaled])

    def coefficient_matrix(self):
        """(1 + L) x K stack of intercept and delta, matching design columns."""
        return np.vstack([self.alpha[None, :], self.delta()])

    def replace_delta(self, delta):
        j0 = self.n_screened
        return replace(self, beta0_scaled=delta[:j0], theta_scaled=delta[j0:])


def tau_sq_reciprocal_params(state, hyper):
    """(IG mean, IG shape) per row, or the Gamma fallback when a row is zero.

    Rows with ||delta_l|| <= threshold take tau^2 ~ Gamma(1/2, lambda^2/2)
    (equivalently 1/tau^2 inverse-Gamma); positive-norm rows take
    1/tau^2 ~ inverse-Gaussian(sqrt(lambda^2/||delta_l||^2), lambda^2).
    """
    norms = np.linalg.norm(state.delta(), axis=1)
    zero = norms <= hyper.zero_norm_threshold
    lam2 = state.lambda_sq
    with np.errstate(divide="ignore"):
        ig_mean = np.sqrt(lam2) / np.where(zero, 1.0, norms)
    return zero, ig_mean, lam2


def draw_tau_sq(state, hyper, rng):
    zero, ig_mean, lam2 = tau_sq_reciprocal_params(state, hyper)
    tau_sq = np.empty(state.n_rows)
    if zero.any():
        tau_sq[zero] = rng.gen.gamma(0.5, 2.0 / lam2, size=int(zero.sum()))
    pos = ~zero
    if pos.any():
        recip = rng.gen.wald(ig_mean[pos], lam2)
        tau_sq[pos] = 1.0 / recip
    return replace(state, tau_sq=tau_sq)


def lambda_sq_params(state, hyper):
    """Conjugate Gamma (shape, rate): shape a + L(K+1)/2, rate b + sum tau^2/2."""
    l_rows, k = state.n_rows, state.n_classes
    shape = hyper.a_lambda + l_rows * (k + 1) / 2.0
    rate = hyper.b_lambda + state.tau_sq.sum() / 2.0
    return shape, rate


def draw_lambda_sq(state, hyper, rng):
    shape, rate = lambda_sq_params(state, hyper)
    return replace(state, lambda_sq=float(rng.gen.gamma(shape, 1.0 / rate)))


def pseudo_inverse_columns(Vnorm, Wtilde):
    """Exact topic predictor columns Xnorm U W^- = Vnorm Wtilde^- D_Wtilde."""
    gram = Wtilde @ Wtilde.T
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "Wtilde rows linearly dependent: "
            f"rank {np.linalg.matrix_rank(Wtilde)} < {Wtilde.shape[0]}",
            rank=int(np.linalg.matrix_rank(Wtilde)),
        ) from exc
    # Vnorm Wtilde^T (W W^T)^{-1}, then scale column s by rowsum_s.
    t = cho_solve(chol, Wtilde @ Vnorm.T).T
    return t * Wtilde.sum(axis=1)[None, :]


def build_augmented_design(md, screen, topic, sigma_obs, sigma_topic,
                           burdens, path="pseudoinverse"):
    """Column-stack the intercept, screened scaled X-tilde, and topic columns.

    `path` selects the exact pseudo-inverse topic columns (the production
    sampler) or the NMF plug-in columns (Approximation 1; also the exactness
    mode's design).  Both are divided by sigma_topic.
    """
    n = md.Vnorm.shape[0]
    xcols = np.asarray(md.Xnorm[:, screen.kept].todense()) / sigma_obs[None, :]
    if path == "pseudoinverse":
        tcols = pseudo_inverse_columns(md.Vnorm, topic.Wtilde) / sigma_topic[None, :]
    elif path == "plugin":
        tcols = plugin_columns(topic.Htilde, topic.w_rowsums(), burdens, sigma_topic)
    else:
        raise ConfigError(f"unknown design path {path!r}")
    return np.hstack([np.ones((n, 1)), xcols, tcols])


def observed_sigma(Xnorm, kept, floor=SIGMA_FLOOR):
    """Data-fixed sds of the screened X-tilde columns, (N-1) denominator."""
    cols = np.asarray(Xnorm[:, kept].todense())
    if cols.shape[1] == 0:
        return np.zeros(0)
    return np.maximum(cols.std(axis=0, ddof=1), floor)


def _offset_logsumexp(eta, k):
    """log sum over k' != k of exp(eta_{n k'}), row-wise, stable."""
    other = np.delete(eta, k, axis=1)
    m = other.max(axis=1)
    return m + np.log(np.exp(other - m[:, None]).sum(axis=1))


def draw_class_coefficients(k, design, state, hyper, labels, rng):
    """PG-augmented joint draw of (alpha_k, delta_{.,k}) given other classes.

    Tilts gamma_nk ~ PG(1, eta_nk - c_nk) with c_nk the log-sum-exp of the
    other classes' linear predictors, then draws from the conditional
    multivariate normal with precision X^T Gamma X + prior and shift
    X^T (y - 1/2 + Gamma c).
    """
    coeff = state.coefficient_matrix()
    eta = design @ coeff
    c = _offset_logsumexp(eta, k)
    psi = eta[:, k] - c
    gamma = sample_polya_gamma(1, psi, rng)
    y = (labels == k).astype(float)

    prior_prec = np.concatenate([[1.0 / hyper.tau0_alpha**2], 1.0 / state.tau_sq])
    prec = design.T @ (gamma[:, None] * design) + np.diag(prior_prec)
    shift = design.T @ (y - 0.5 + gamma * c)
    draw = sample_mvn_precision(prec, shift, rng)

    new_alpha = state.alpha.copy()
    new_alpha[k] = draw[0]
    delta = state.delta().copy()
    delta[:, k] = draw[1:]
    out = state.replace_delta(delta)
    gamma_pg = state.gamma_pg
    if gamma_pg is None:
        gamma_pg = np.zeros((design.shape[0], state.n_classes))
    else:
        gamma_pg = gamma_pg.copy()
    gamma_pg[:, k] = gamma
    return replace(out, alpha=new_alpha, gamma_pg=gamma_pg)


def sweep_classes(design, state, hyper, labels, rng):
    """Sequentially refresh every class's coefficients."""
    for k in range(state.n_classes):
        state = draw_class_coefficients(k, design, state, hyper, labels, rng)
    return state


def scale_coefficients(beta0, theta, sigma_obs, sigma_topic):
    return sigma_obs[:, None] * beta0, sigma_topic[:, None] * theta


def descale_coefficients_arrays(beta0_scaled, theta_scaled, sigma_obs, sigma_topic):
    return beta0_scaled / sigma_obs[:, None], theta_scaled / sigma_topic[:, None]
