"""Exact samplers for the primitive distributions used by the Gibbs sweep.

All samplers are deterministic given an RngStream and draw through its
numpy Generator in a fixed call order, so reruns with an equal stream are
bit-identical.  The Polya-Gamma sampler is the exact Devroye alternating-
series rejection for PG(1, c); no truncated-sum or saddle approximation is
used anywhere.
"""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf
from scipy.special import expit, log_ndtr

from .errors import DomainError, NumericalError

# Devroye sampler constants for the tilted Jacobi density.
_TRUNC = 0.64
_LOG_PI_HALF = np.log(np.pi / 2.0)


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw under the rate parameterization (mean = shape/rate)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise DomainError("gamma requires shape > 0 and rate > 0")
    return rng.gen.gamma(shape, 1.0 / rate, size=size)


def sample_inverse_gaussian(mean, shape, rng, size=None):
    """Inverse-Gaussian draw with the given mean and shape parameter."""
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(mean <= 0) or np.any(shape <= 0):
        raise DomainError("inverse-Gaussian requires mean > 0 and shape > 0")
    return rng.gen.wald(mean, shape, size=size)


def sample_multinomial(total, probs, rng):
    """Multinomial counts over len(probs) cells."""
    total = int(total)
    probs = np.asarray(probs, dtype=float)
    if total < 0:
        raise DomainError("multinomial requires total >= 0")
    if np.any(probs < 0):
        raise DomainError("multinomial probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise DomainError("multinomial probabilities must sum to 1 within 1e-12")
    if total == 0:
        return np.zeros(probs.shape, dtype=np.int64)
    return rng.gen.multinomial(total, probs / probs.sum()).astype(np.int64)


def sample_mvn_precision(precision, shift, rng):
    """Draw from N(B @ shift, B) with B = precision^{-1}.

    One Cholesky factorization and triangular solves only; the inverse is
    never formed.  Raises NumericalError carrying the failing pivot index
    when the precision matrix is not positive definite.
    """
    precision = np.asarray(precision, dtype=float)
    shift = np.asarray(shift, dtype=float)
    chol, info = dpotrf(precision, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        raise NumericalError(
            f"precision matrix not positive definite (pivot {info})", pivot=int(info)
        )
    mean = cho_solve((chol, True), shift)
    z = rng.gen.standard_normal(precision.shape[0])
    return mean + solve_triangular(chol, z, lower=True, trans="T")


def sample_polya_gamma(b, c, rng, size=None):
    """Exact PG(b, c) draw; only b = 1 is supported.

    `c` may be a scalar (with optional `size`) or an array, in which case one
    draw per element is returned.
    """
    if b != 1:
        raise DomainError("only PG(1, c) is supported")
    c = np.asarray(c, dtype=float)
    if size is not None:
        c = np.broadcast_to(c, size)
    scalar = c.ndim == 0
    z = np.abs(np.atleast_1d(c)).ravel() / 2.0
    draws = _pg1_devroye(z, rng.gen)
    if scalar and size is None:
        return float(draws[0])
    return draws.reshape(np.atleast_1d(c).shape if size is None else size)


def _pg1_devroye(z, gen):
    """Vectorized Devroye sampler for J*(1, z)/4 with z = |c|/2 >= 0."""
    n = z.shape[0]
    out = np.empty(n)
    pending = np.arange(n)
    t = _TRUNC

    # Proposal mixture weights, computed in logs for stability at large z.
    k = np.pi**2 / 8.0 + z**2 / 2.0
    log_p = _LOG_PI_HALF - np.log(k) - k * t
    sqt = np.sqrt(t)
    log_q = np.log(2.0) + np.logaddexp(
        -z + log_ndtr((t * z - 1.0) / sqt), z + log_ndtr(-(t * z + 1.0) / sqt)
    )
    prob_right = expit(log_p - log_q)

    guard = 0
    while pending.size:
        guard += 1
        if guard > 10_000:
            raise NumericalError("PG sampler failed to terminate")
        zi = z[pending]
        right = gen.random(pending.size) < prob_right[pending]
        x = np.empty(pending.size)
        if right.any():
            x[right] = t + gen.standard_exponential(int(right.sum())) / k[pending][right]
        left = ~right
        if left.any():
            x[left] = _trunc_inverse_gaussian(zi[left], t, gen)
        accept = _series_accept(x, gen.random(pending.size), t)
        done = pending[accept]
        out[done] = x[accept] / 4.0
        pending = pending[~accept]
    return out


def _trunc_inverse_gaussian(z, t, gen):
    """Draw from IG(1/z, 1) truncated to (0, t), vectorized; handles z = 0."""
    n = z.shape[0]
    x = np.empty(n)
    small = z < 1.0 / t  # mean above the truncation point (incl. z = 0)
    idx = np.flatnonzero(small)
    while idx.size:
        e1 = gen.standard_exponential(idx.size)
        e2 = gen.standard_exponential(idx.size)
        ok = e1 * e1 <= 2.0 * e2 / t
        cand = t / (1.0 + t * e1) ** 2
        ok &= np.log(gen.random(idx.size)) <= -z[idx] ** 2 * cand / 2.0
        x[idx[ok]] = cand[ok]
        idx = idx[~ok]
    idx = np.flatnonzero(~small)
    if idx.size:
        mu = 1.0 / z[idx]
        sub = np.arange(idx.size)
        while sub.size:
            m = mu[sub]
            y = gen.standard_normal(sub.size) ** 2
            cand = m + 0.5 * m * (m * y - np.sqrt(4.0 * m * y + (m * y) ** 2))
            flip = gen.random(sub.size) > m / (m + cand)
            cand[flip] = m[flip] ** 2 / cand[flip]
            ok = cand < t
            x[idx[sub[ok]]] = cand[ok]
            sub = sub[~ok]
    return x


def _series_coef(i, x, t):
    """i-th alternating-series coefficient of the Jacobi density at x."""
    half = i + 0.5
    out = np.where(
        x <= t,
        np.pi * half * (2.0 / (np.pi * np.maximum(x, 1e-300))) ** 1.5
        * np.exp(-2.0 * half**2 / np.maximum(x, 1e-300)),
        np.pi * half * np.exp(-(half**2) * np.pi**2 * x / 2.0),
    )
    return out


def _series_accept(x, v, t):
    """Alternating-series accept/reject decisions for proposals x."""
    s = _series_coef(0, x, t)
    y = v * s
    accept = np.zeros(x.shape, dtype=bool)
    undecided = np.ones(x.shape, dtype=bool)
    i = 0
    while undecided.any():
        i += 1
        if i > 500:
            raise NumericalError("PG series test failed to converge")
        coef = _series_coef(i, x[undecided], t)
        if i % 2 == 1:
            s_new = s[undecided] - coef
            hit = y[undecided] <= s_new
            accept[np.flatnonzero(undecided)[hit]] = True
            s[undecided] = s_new
            decided_now = hit
        else:
            s_new = s[undecided] + coef
            miss = y[undecided] > s_new
            s[undecided] = s_new
            decided_now = miss
        undecided[np.flatnonzero(undecided)[decided_now]] = False
    return accept


def pg_mean(c):
    """E[PG(1, c)] = tanh(c/2) / (2c), with the c -> 0 limit 1/4."""
    c = np.asarray(c, dtype=float)
    out = np.full(c.shape, 0.25)
    nz = np.abs(c) > 1e-12
    out[nz] = np.tanh(c[nz] / 2.0) / (2.0 * c[nz])
    return out if out.ndim else float(out)
