"""Point estimation used to initialize the chain at the approximate marginal
posterior mode: a group-lasso multinomial-logistic MAP fitted by monotone
accelerated proximal gradient with the penalty chosen by cross-validation,
and an unsupervised KL-divergence NMF fitted by multiplicative updates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

_NMF_EPS = 1e-12


def softmax_rows(eta):
    m = eta.max(axis=1, keepdims=True)
    p = np.exp(eta - m)
    return p / p.sum(axis=1, keepdims=True)


def multinomial_nll(alpha, coef, A, labels):
    eta = alpha[None, :] + A @ coef
    m = eta.max(axis=1)
    lse = m + np.log(np.exp(eta - m[:, None]).sum(axis=1))
    return float(lse.sum() - eta[np.arange(len(labels)), labels].sum())


def _penalty(coef, lam):
    return lam * np.linalg.norm(coef, axis=1).sum()


def _group_soft_threshold(coef, thresh):
    norms = np.linalg.norm(coef, axis=1)
    scale = np.maximum(0.0, 1.0 - thresh / np.maximum(norms, 1e-300))
    return coef * scale[:, None]


@dataclass
class MapFit:
    alpha: np.ndarray
    coef: np.ndarray                 # L x K group-penalized coefficients
    penalty: float
    objective_trace: np.ndarray
    converged: bool


def fit_group_lasso_map(A, labels, n_classes, penalty, max_iter=500, tol=1e-9,
                        init=None):
    """Group-lasso penalized symmetric multi-logit MAP.

    Minimizes NLL(alpha, coef) + penalty * sum_l ||coef_l.||_2 by monotone
    FISTA with backtracking; the intercept is unpenalized.  Row groups are
    the K coefficients of one predictor column.
    """
    n, l_rows = A.shape
    y = np.zeros((n, n_classes))
    y[np.arange(n), labels] = 1.0

    if init is None:
        freq = y.mean(axis=0)
        alpha = np.log(np.maximum(freq, 1e-12))
        alpha -= alpha.mean()
        coef = np.zeros((l_rows, n_classes))
    else:
        alpha, coef = init[0].copy(), init[1].copy()

    def prox_step(a0, c0, step):
        """Backtracked proximal-gradient step from (a0, c0).

        The majorization test guarantees the step never increases the
        objective when taken from the current iterate.
        """
        p = softmax_rows(a0[None, :] + A @ c0)
        g_alpha = (p - y).sum(axis=0)
        g_coef = A.T @ (p - y)
        nll0 = multinomial_nll(a0, c0, A, labels)
        for _ in range(80):
            a1 = a0 - step * g_alpha
            c1 = _group_soft_threshold(c0 - step * g_coef, step * penalty)
            nll1 = multinomial_nll(a1, c1, A, labels)
            da, dc = a1 - a0, c1 - c0
            quad = nll0 + g_alpha @ da + (g_coef * dc).sum() \
                + (da @ da + (dc * dc).sum()) / (2 * step)
            if nll1 <= quad + 1e-12 * abs(quad):
                return a1, c1, nll1 + _penalty(c1, penalty), step
            step *= 0.5
        return a1, c1, nll1 + _penalty(c1, penalty), step

    step = 4.0 / max(np.linalg.norm(A, 2) ** 2 + 4.0, 4.0)
    obj = multinomial_nll(alpha, coef, A, labels) + _penalty(coef, penalty)
    trace = [obj]
    x_alpha, x_coef = alpha, coef          # current accepted iterate
    y_alpha, y_coef = alpha, coef          # extrapolation point
    t_mom = 1.0
    converged = False
    for _ in range(max_iter):
        cand_alpha, cand_coef, cand_obj, step = prox_step(y_alpha, y_coef, step * 1.5)
        if cand_obj > obj:
            # monotone safeguard: restart momentum, step from the iterate
            cand_alpha, cand_coef, cand_obj, step = prox_step(x_alpha, x_coef, step)
            t_mom = 1.0
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2)) / 2.0
        mom = (t_mom - 1.0) / t_next
        y_alpha = cand_alpha + mom * (cand_alpha - x_alpha)
        y_coef = cand_coef + mom * (cand_coef - x_coef)
        x_alpha, x_coef = cand_alpha, cand_coef
        t_mom = t_next
        trace.append(cand_obj)
        if obj - cand_obj <= tol * (abs(obj) + 1.0):
            obj = cand_obj
            converged = True
            break
        obj = cand_obj
    return MapFit(alpha=x_alpha, coef=x_coef, penalty=penalty,
                  objective_trace=np.array(trace), converged=converged)


def penalty_upper_bound(A, labels, n_classes):
    """Smallest penalty that zeroes every group at the intercept-only fit."""
    n = A.shape[0]
    y = np.zeros((n, n_classes))
    y[np.arange(n), labels] = 1.0
    p0 = np.broadcast_to(y.mean(axis=0), y.shape)
    g = A.T @ (p0 - y)
    return float(np.linalg.norm(g, axis=1).max())


def cv_penalty_grid(lam_max, n_points=20, decades=3.0):
    return np.geomspace(lam_max, lam_max * 10.0 ** (-decades), n_points)


def select_penalty_cv(A, labels, n_classes, rng, folds=5, n_points=20,
                      max_iter=300):
    """Pick the group-lasso penalty by K-fold CV over a log grid.

    Returns (best penalty, grid, mean held-out deviances).  Warm starts run
    down the grid from the largest penalty.
    """
    from .evaluate import stratified_folds

    lam_max = penalty_upper_bound(A, labels, n_classes)
    if lam_max <= 0:
        raise NumericalError("degenerate design: zero gradient at null fit")
    grid = cv_penalty_grid(lam_max, n_points)
    assignment = stratified_folds(labels, folds=folds, rng=rng).fold_of
    scores = np.zeros((folds, len(grid)))
    for f in range(folds):
        train = assignment != f
        test = ~train
        init = None
        for gi, lam in enumerate(grid):
            fit = fit_group_lasso_map(A[train], labels[train], n_classes, lam,
                                      max_iter=max_iter, init=init)
            init = (fit.alpha, fit.coef)
            scores[f, gi] = multinomial_nll(fit.alpha, fit.coef,
                                            A[test], labels[test])
    mean_scores = scores.mean(axis=0)
    best = int(np.argmin(mean_scores))     # grid descends, ties -> larger lambda
    return float(grid[best]), grid, mean_scores


def kl_divergence(V, approx):
    """Generalized KL divergence D(V || approx) for the Poisson objective."""
    a = np.maximum(approx, _NMF_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(V > 0, V * (np.log(np.maximum(V, _NMF_EPS)) - np.log(a)), 0.0)
    return float((t - V + a).sum())


def kl_nmf(V, n_topics, rng, max_iter=500, tol=1e-6):
    """Poisson (KL) NMF V ~ H W by multiplicative updates.

    Factors stay strictly positive; a failed run is jittered by 1e-8 and
    retried once.  Returns (H, W, final divergence).
    """
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ConfigError("NMF input must be non-negative")
    n, p = V.shape
    gen = rng.gen
    avg = np.sqrt(max(V.mean(), _NMF_EPS) / n_topics)
    H = np.abs(avg * gen.standard_normal((n, n_topics))) + _NMF_EPS
    W = np.abs(avg * gen.standard_normal((n_topics, p))) + _NMF_EPS

    for attempt in range(2):
        prev = kl_divergence(V, H @ W)
        for _ in range(max_iter):
            WH = np.maximum(H @ W, _NMF_EPS)
            H *= (V / WH) @ W.T / np.maximum(W.sum(axis=1)[None, :], _NMF_EPS)
            WH = np.maximum(H @ W, _NMF_EPS)
            W *= H.T @ (V / WH) / np.maximum(H.sum(axis=0)[:, None], _NMF_EPS)
            cur = kl_divergence(V, H @ W)
            if prev - cur <= tol * max(abs(prev), 1.0):
                prev = cur
                break
            prev = cur
        if np.all(H > 0) and np.all(W > 0) and np.all(np.isfinite(H)) \
                and np.all(np.isfinite(W)):
            break
        H = np.maximum(np.nan_to_num(H), 0.0) + 1e-8
        W = np.maximum(np.nan_to_num(W), 0.0) + 1e-8
        if attempt == 1:
            raise NumericalError("NMF failed to produce strictly positive factors")
    return H, W, prev
