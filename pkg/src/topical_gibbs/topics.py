"""Gibbs sub-sweep over the supervised topic layer.

One sweep draws the latent allocations Z, conjugate Gamma updates of the
un-normalized topics W-tilde, and independence-Metropolis updates of the
rows of H-tilde whose proposals come from the unsupervised Poisson-Gamma
conditional and whose acceptance ratio carries the supervised multinomial-
logistic contribution under the NMF plug-in.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

SIGMA_FLOOR = 1e-8


class SigmaMode(enum.Enum):
    """How the topic-column standard deviations enter the H-row updates.

    FROZEN: sigma is refreshed once per Gibbs iteration before the H sweep
    and held fixed across rows and proposals (the fast, default mode; rows
    then update independently).  PER_ITERATION: sigma is recomputed inside
    every proposal evaluation and the acceptance ratio carries every tumor's
    likelihood term, making the H update an exact Metropolis step for the
    plug-in model (the mode exactness tests run in).
    """

    FROZEN = "frozen"
    PER_ITERATION = "per_iteration"


@dataclass
class TopicHyper:
    a_H: float = 1.0
    b_H: float = 1.0
    a_W: float = 0.5
    b_W: float = 0.5
    n_topics: int = 50
    block_size: int | None = None    # default: 10 when S >= 50, else whole row
    max_retries: int = 3             # composed MH attempts per block, cap 25
    target_acceptance: float = 0.9

    def __post_init__(self):
        if min(self.a_H, self.b_H, self.a_W, self.b_W) <= 0:
            raise ConfigError("topic prior hyperparameters must be positive")
        if self.n_topics < 1:
            raise ConfigError("need at least one topic")
        if self.block_size is not None and not (1 <= self.block_size <= self.n_topics):
            raise ConfigError("block_size must lie in [1, n_topics]")
        if not (1 <= self.max_retries <= 25):
            raise ConfigError("max_retries must lie in [1, 25]")

    def effective_block_size(self):
        if self.block_size is not None:
            return self.block_size
        return 10 if self.n_topics >= 50 else self.n_topics


@dataclass
class TopicState:
    """Un-normalized topic parameters plus the sparse latent allocations.

    Z is stored only for (n, p) cells with V_np > 0: `cell_rows[c]`,
    `cell_cols[c]` give the cell and `z_counts[c, s]` its allocation to
    topic s; all-zero cells contribute nothing to any conditional.
    """

    Htilde: np.ndarray               # N x S, strictly positive
    Wtilde: np.ndarray               # S x P, strictly positive
    cell_rows: np.ndarray
    cell_cols: np.ndarray
    z_counts: np.ndarray             # nnz x S
    sigma_topic: np.ndarray          # length S, floored
    sigma_mode: SigmaMode = SigmaMode.FROZEN

    @property
    def n_topics(self):
        return self.Htilde.shape[1]

    def w_rowsums(self):
        return self.Wtilde.sum(axis=1)

    def z_sum_over_p(self):
        out = np.zeros(self.Htilde.shape)
        np.add.at(out, self.cell_rows, self.z_counts)
        return out

    def z_sum_over_n(self):
        out = np.zeros((self.Wtilde.shape[1], self.n_topics))
        np.add.at(out, self.cell_cols, self.z_counts)
        return out.T


def normalized_topics(Wtilde):
    """Rows of W: composition probabilities over the P categories."""
    return Wtilde / Wtilde.sum(axis=1, keepdims=True)


def exposures(Htilde, Wtilde):
    """zeta rows: tumor mixing weights over topics, via H = Htilde D_W."""
    H = Htilde * Wtilde.sum(axis=1)[None, :]
    return H / H.sum(axis=1, keepdims=True)


def init_topic_state(Htilde, Wtilde, V, sigma_mode=SigmaMode.FROZEN):
    if np.any(Htilde <= 0) or np.any(Wtilde <= 0):
        raise DomainError("topic factors must be strictly positive")
    rows, cols = np.nonzero(V)
    return TopicState(
        Htilde=np.array(Htilde, dtype=float),
        Wtilde=np.array(Wtilde, dtype=float),
        cell_rows=rows,
        cell_cols=cols,
        z_counts=np.zeros((len(rows), Htilde.shape[1]), dtype=np.int64),
        sigma_topic=np.full(Htilde.shape[1], SIGMA_FLOOR),
        sigma_mode=sigma_mode,
    )


def draw_Z(state, V, rng):
    """Multinomial allocation of each positive V_np across topics."""
    totals = V[state.cell_rows, state.cell_cols]
    phi = state.Htilde[state.cell_rows] * state.Wtilde[:, state.cell_cols].T
    phi /= phi.sum(axis=1, keepdims=True)
    counts = rng.gen.multinomial(totals, phi).astype(np.int64)
    return replace(state, z_counts=counts)


def w_gamma_params(state, hyper):
    """Full-conditional Gamma (shape, rate) for every W-tilde entry."""
    shape = hyper.a_W + state.z_sum_over_n()
    rate = hyper.b_W + state.Htilde.sum(axis=0)
    return shape, np.broadcast_to(rate[:, None], shape.shape)


def draw_W(state, hyper, rng):
    shape, rate = w_gamma_params(state, hyper)
    return replace(state, Wtilde=rng.gen.gamma(shape, 1.0 / rate))


def h_gamma_params(state, hyper):
    """Unsupervised proposal Gamma (shape N x S, rate S) for H-tilde rows."""
    shape = hyper.a_H + state.z_sum_over_p()
    rate = hyper.b_H + state.Wtilde.sum(axis=1)
    return shape, rate


def compute_sigma_topic(state, burdens, floor=SIGMA_FLOOR):
    """sigma_topic,s = (sum_p Wtilde_sp) * sd(Htilde_ns / M_n over n), ddof 1."""
    if state.Htilde.shape[0] < 2:
        raise DomainError("sample standard deviation needs at least two tumors")
    scaled = state.Htilde / np.asarray(burdens, dtype=float)[:, None]
    sd = scaled.std(axis=0, ddof=1)
    return np.maximum(state.w_rowsums() * sd, floor)


@dataclass
class SupervisedContext:
    """Everything the H-row Metropolis ratio needs from the logistic layer.

    `base` rows hold the topic-free part of every tumor's linear predictor,
    alpha_k + x-tilde_n D_obs^{-1} beta-tilde_{.k}.
    """

    base: np.ndarray                 # N x K
    labels: np.ndarray               # N
    burdens: np.ndarray              # N
    theta_scaled: np.ndarray         # S x K
    sigma_topic: np.ndarray          # S, used when frozen
    sigma_floor: float = SIGMA_FLOOR


def plugin_columns(Htilde, w_rowsums, burdens, sigma_topic):
    """A1 plug-in topic predictor columns: H_ns rowsum_s / (M_n sigma_s)."""
    return Htilde * (w_rowsums / sigma_topic)[None, :] \
        / np.asarray(burdens, dtype=float)[:, None]


def plugin_sigma(Htilde, w_rowsums, burdens, floor=SIGMA_FLOOR):
    scaled = Htilde / np.asarray(burdens, dtype=float)[:, None]
    return np.maximum(w_rowsums * scaled.std(axis=0, ddof=1), floor)


def _row_loglik(base_row, contrib, label):
    lp = base_row + contrib
    m = lp.max()
    return lp[label] - (m + np.log(np.exp(lp - m).sum()))


def _full_loglik(base, Htilde, w_rowsums, burdens, theta_scaled, labels, floor):
    sigma = plugin_sigma(Htilde, w_rowsums, burdens, floor)
    lp = base + plugin_columns(Htilde, w_rowsums, burdens, sigma) @ theta_scaled
    m = lp.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lp - m).sum(axis=1))
    return (lp[np.arange(len(labels)), labels] - lse).sum()


def _update_row(H, n, shape_row, rate, w_rowsums, hyper, sup, rng, blocks, frozen):
    """In-place Metropolis update of one H row; returns True when it moved.

    Each retry is a fresh Metropolis step composed from the current state
    (never stop-and-keep-first-acceptance), so the kernel stays exactly
    stationary.
    """
    moved = False
    if frozen:
        u = (w_rowsums / sup.sigma_topic)[:, None] * sup.theta_scaled
        inv_m = 1.0 / float(sup.burdens[n])
        contrib = (H[n] * inv_m) @ u
        cur_ll = _row_loglik(sup.base[n], contrib, sup.labels[n])
    else:
        cur_ll = _full_loglik(sup.base, H, w_rowsums, sup.burdens,
                              sup.theta_scaled, sup.labels, sup.sigma_floor)
    for block in blocks:
        for _ in range(hyper.max_retries):
            prop = rng.gen.gamma(shape_row[block], 1.0 / rate[block])
            if frozen:
                new_contrib = contrib + ((prop - H[n, block]) * inv_m) @ u[block]
                new_ll = _row_loglik(sup.base[n], new_contrib, sup.labels[n])
            else:
                old_vals = H[n, block].copy()
                H[n, block] = prop
                new_ll = _full_loglik(sup.base, H, w_rowsums, sup.burdens,
                                      sup.theta_scaled, sup.labels, sup.sigma_floor)
            log_r = new_ll - cur_ll
            if not np.isfinite(log_r):
                raise DomainError("non-finite Metropolis ratio for H row update")
            if np.log(rng.gen.random()) < log_r:
                if frozen:
                    H[n, block] = prop
                    contrib = new_contrib
                cur_ll = new_ll
                moved = True
            elif not frozen:
                H[n, block] = old_vals
    return moved


def mh_update_H_row(n, state, hyper, sup, rng, blocks=None):
    """Independence-Metropolis update of row n of H-tilde.

    Proposals come from the unsupervised Gamma conditional; a block accepts
    with probability min(1, r) where r is the ratio of plug-in multinomial-
    logistic likelihood terms: tumor n's term alone in FROZEN mode (the
    other tumors' terms cancel under a fixed sigma), every tumor's term in
    PER_ITERATION mode where a row move shifts the sigma statistics.

    Returns (state, accepted) with accepted = True when any attempt moved.
    """
    shape_all, rate = h_gamma_params(state, hyper)
    if blocks is None:
        blocks = random_blocks(state.n_topics, hyper.effective_block_size(), rng)
    H = state.Htilde.copy()
    moved = _update_row(H, n, shape_all[n], rate, state.w_rowsums(), hyper, sup,
                        rng, blocks, state.sigma_mode is SigmaMode.FROZEN)
    return replace(state, Htilde=H), moved


def random_blocks(n_topics, block_size, rng):
    """Uniformly random partition of 0..S-1 into pieces of size <= block_size."""
    perm = rng.gen.permutation(n_topics)
    return [perm[i:i + block_size] for i in range(0, n_topics, block_size)]


def sweep_H(state, hyper, sup, rng, row_rngs=None):
    """Update every row of H-tilde; returns (state, moved fraction).

    The block partition is resampled once per sweep and shared across rows.
    `row_rngs` optionally supplies one stream per row (parallel policy:
    stream id = iteration * N + n); default is the single sequential stream.
    """
    shape_all, rate = h_gamma_params(state, hyper)
    blocks = random_blocks(state.n_topics, hyper.effective_block_size(), rng)
    H = state.Htilde.copy()
    w_rowsums = state.w_rowsums()
    frozen = state.sigma_mode is SigmaMode.FROZEN
    moved = 0
    n_rows = H.shape[0]
    for n in range(n_rows):
        row_rng = rng if row_rngs is None else row_rngs[n]
        moved += _update_row(H, n, shape_all[n], rate, w_rowsums, hyper, sup,
                             row_rng, blocks, frozen)
    return replace(state, Htilde=H), moved / max(n_rows, 1)
