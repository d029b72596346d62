"""Post-hoc identification of topic draws, coefficient de-scaling,
generalized log odds, and HPD interval summaries of stored chains.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree

from .errors import ConfigError, DomainError, NumericalError
from .topics import SIGMA_FLOOR


class OddsScale(enum.Enum):
    PER_UNIT = "per_unit"
    PER_SD = "per_sd"


class OddsTarget(enum.Enum):
    VARIANT = "variant"
    CATEGORY = "category"
    TOPIC_CLUSTER = "topic_cluster"


@dataclass(frozen=True)
class OddsQuery:
    """Generalized odds of class set A against baseline set B for one
    predictor (a screened variant, an observed category, or an identified
    topic cluster)."""

    a: tuple
    b: tuple
    target: OddsTarget
    index: int                        # local index of the target
    scale: OddsScale = OddsScale.PER_UNIT

    def __post_init__(self):
        if not self.a or not self.b:
            raise DomainError("class sets A and B must be non-empty")


def one_vs_rest_query(k, n_classes, target, index, scale=OddsScale.PER_UNIT):
    rest = tuple(i for i in range(n_classes) if i != k)
    return OddsQuery(a=(k,), b=rest, target=target, index=index, scale=scale)


def generalized_log_odds(coeff_row, query):
    """Mean over A minus mean over B of one predictor's K coefficients."""
    coeff_row = np.asarray(coeff_row, dtype=float)
    if len(query.a) == 0 or len(query.b) == 0:
        raise DomainError("class sets A and B must be non-empty")
    return float(coeff_row[list(query.a)].mean() - coeff_row[list(query.b)].mean())


def hpd_interval(samples, mass=0.8):
    """Shortest window of ceil(mass * T) sorted samples; leftmost on ties."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n < 20:
        raise DomainError("HPD interval needs at least 20 samples")
    if not 0.0 < mass < 1.0:
        raise DomainError("mass must lie in (0, 1)")
    m = min(int(math.ceil(mass * n)), n)
    widths = samples[m - 1:] - samples[: n - m + 1]
    i = int(np.argmin(widths))
    return float(samples[i]), float(samples[i + m - 1])


def right_pseudo_inverse(W):
    """W^T (W W^T)^{-1}; raises on linearly dependent rows."""
    W = np.asarray(W, dtype=float)
    gram = W @ W.T
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "topic matrix rows linearly dependent",
            rank=int(np.linalg.matrix_rank(W)),
        ) from exc
    return cho_solve(chol, W).T


def descale_coefficients(record, floor=SIGMA_FLOOR):
    """Recover beta0, theta, omega from one stored record.

    beta0 = beta0_scaled / sigma_obs, theta = theta_scaled / sigma_topic,
    omega = W^- theta with W the normalized topics.  Coefficients whose
    sigma sits at the floor are flagged unstable.
    """
    sigma_obs = np.maximum(record.sigma_obs, floor)
    sigma_topic = np.maximum(record.sigma_topic, floor)
    beta0 = record.beta0_scaled / sigma_obs[:, None] \
        if record.beta0_scaled.size else record.beta0_scaled.copy()
    theta = record.theta_scaled / sigma_topic[:, None]
    w_norm = record.wtilde / record.wtilde.sum(axis=1, keepdims=True)
    omega = right_pseudo_inverse(w_norm) @ theta
    unstable = {
        "beta0": record.sigma_obs <= floor if record.sigma_obs.size else
                 np.zeros(0, dtype=bool),
        "theta": record.sigma_topic <= floor,
    }
    return {"beta0": beta0, "theta": theta, "omega": omega, "unstable": unstable}


@dataclass
class IdentifiedTopics:
    n_clusters: int
    centers: np.ndarray               # k* x P probability vectors
    labels: np.ndarray                # (n_records, S) cluster id, -1 = outlier
    outlier_fraction: float
    wcss: dict                        # k -> within-cluster sum of squares
    compositions: list                # per cluster: draws of W rows
    exposures: list                   # per cluster: draws of zeta columns
    theta_rows: list                  # per cluster: descaled theta rows
    theta_scaled_rows: list           # per cluster: scaled theta rows (per-sd)


def _pca_project(pool, n_dims):
    centered = pool - pool.mean(axis=0, keepdims=True)
    r = min(n_dims, *centered.shape)
    if centered.shape[0] <= 1:
        return centered
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:r].T


def _knn_outliers(points, k_neighbors, cap=0.10):
    n = points.shape[0]
    k_eff = min(k_neighbors, n - 1)
    if k_eff < 1:
        return np.zeros(n, dtype=bool)
    if n <= 100_000:
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=k_eff + 1)
        mean_dist = dist[:, 1:].mean(axis=1)
    else:
        # approximate: distances against a fixed-size reference subsample
        ref = points[:: max(1, n // 100_000)]
        tree = cKDTree(ref)
        dist, _ = tree.query(points, k=min(k_eff + 1, ref.shape[0]))
        mean_dist = dist[:, 1:].mean(axis=1)
    cut = np.quantile(mean_dist, 0.99)
    flags = mean_dist > cut
    if flags.mean() > cap:
        order = np.argsort(mean_dist)[::-1]
        flags = np.zeros(n, dtype=bool)
        flags[order[: int(cap * n)]] = True
    return flags


def _kmeans_scan(points, k_values, seed):
    import warnings

    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    wcss = {}
    fits = {}
    for k in k_values:
        km = KMeans(n_clusters=k, n_init=10, random_state=seed)
        with warnings.catch_warnings():
            # pools with heavy duplication yield fewer distinct centers
            warnings.simplefilter("ignore", ConvergenceWarning)
            km.fit(points)
        wcss[k] = float(km.inertia_)
        fits[k] = km
    return wcss, fits


def identify_topics(store, rng, pca_dims=50, outlier_knn=10, k_range=None,
                    outlier_cap=0.10):
    """Cluster pooled topic draws to resolve label switching.

    Pools the normalized topic rows of every stored record, projects to
    principal components, filters kNN outliers, scans k-means over the k
    range and picks the elbow (largest second difference of the
    within-cluster sum of squares, ties to smaller k), then relabels every
    drawn topic by its cluster.
    """
    records = store.records
    if len(records) < 2:
        raise ConfigError("identification needs at least 2 stored records")
    n_topics = records[0].wtilde.shape[0]
    w_pool = np.vstack([
        rec.wtilde / rec.wtilde.sum(axis=1, keepdims=True) for rec in records
    ])
    n_pool = w_pool.shape[0]
    if k_range is None:
        k_range = range(2, 2 * n_topics + 1)
    k_range = [k for k in k_range if 1 <= k < n_pool]
    if not k_range:
        raise ConfigError("pooled draws too few for the requested k range")

    projected = _pca_project(w_pool, pca_dims)
    outliers = _knn_outliers(projected, outlier_knn, cap=outlier_cap)
    kept_points = projected[~outliers]

    total_ss = float(((kept_points - kept_points.mean(axis=0)) ** 2).sum())
    seed = int(rng.gen.integers(2**31 - 1))
    if total_ss <= 1e-12 * max(1.0, n_pool):
        labels_kept = np.zeros(kept_points.shape[0], dtype=int)
        best_k = 1
        wcss = {1: total_ss}
    else:
        scan = sorted({1, *(k - 1 for k in k_range), *k_range,
                       *(k + 1 for k in k_range)})
        scan = [k for k in scan if 1 <= k <= kept_points.shape[0]]
        wcss, fits = _kmeans_scan(kept_points, [k for k in scan if k > 1], seed)
        wcss[1] = total_ss
        best_k, best_curv = None, -np.inf
        for k in k_range:
            if k - 1 not in wcss or k + 1 not in wcss:
                continue
            curv = wcss[k + 1] - 2 * wcss[k] + wcss[k - 1]
            if curv > best_curv + 1e-12:
                best_k, best_curv = k, curv
        if best_k is None:
            best_k = k_range[0]
        labels_kept = fits[best_k].labels_

    labels_flat = np.full(n_pool, -1, dtype=int)
    labels_flat[~outliers] = labels_kept
    labels = labels_flat.reshape(len(records), n_topics)

    centers = np.vstack([
        w_pool[labels_flat == g].mean(axis=0) for g in range(best_k)
    ]) if best_k else np.zeros((0, w_pool.shape[1]))

    compositions = [[] for _ in range(best_k)]
    exposures_by = [[] for _ in range(best_k)]
    theta_rows = [[] for _ in range(best_k)]
    theta_scaled_rows = [[] for _ in range(best_k)]
    for t, rec in enumerate(records):
        descaled = descale_coefficients(rec)
        w_norm = rec.wtilde / rec.wtilde.sum(axis=1, keepdims=True)
        for s in range(n_topics):
            g = labels[t, s]
            if g < 0:
                continue
            compositions[g].append(w_norm[s])
            exposures_by[g].append(rec.zeta[:, s])
            theta_rows[g].append(descaled["theta"][s])
            theta_scaled_rows[g].append(rec.theta_scaled[s])
    return IdentifiedTopics(
        n_clusters=int(best_k),
        centers=centers,
        labels=labels,
        outlier_fraction=float(outliers.mean()),
        wcss=wcss,
        compositions=[np.array(v) for v in compositions],
        exposures=[np.array(v) for v in exposures_by],
        theta_rows=[np.array(v) for v in theta_rows],
        theta_scaled_rows=[np.array(v) for v in theta_scaled_rows],
    )


@dataclass
class SummaryRow:
    query: OddsQuery
    mean: float
    median: float
    hpd_low: float
    hpd_high: float
    n_draws: int
    flags: tuple = ()


def _query_values(store, identified, query):
    """Per-draw generalized log odds for one query."""
    if query.target is OddsTarget.TOPIC_CLUSTER:
        if identified is None:
            raise ConfigError("topic-cluster queries need identified topics")
        rows = (identified.theta_scaled_rows if query.scale is OddsScale.PER_SD
                else identified.theta_rows)[query.index]
        return np.array([generalized_log_odds(r, query) for r in rows])
    values = []
    sigma_cat = np.asarray(store.manifest.get("sigma_categories", []))
    for rec in store.records:
        descaled = descale_coefficients(rec)
        if query.target is OddsTarget.VARIANT:
            row = (rec.beta0_scaled[query.index]
                   if query.scale is OddsScale.PER_SD
                   else descaled["beta0"][query.index])
        else:
            row = descaled["omega"][query.index]
            if query.scale is OddsScale.PER_SD:
                row = row * sigma_cat[query.index]
        values.append(generalized_log_odds(row, query))
    return np.array(values)


def posterior_summary(store, identified, queries, hpd_mass=0.8):
    """Mean, median, and HPD summaries of the generalized log odds."""
    rows = []
    for query in queries:
        values = _query_values(store, identified, query)
        flags = []
        if values.size < 20:
            flags.append("insufficient_samples")
            lo, hi = (float(values.min()), float(values.max())) if values.size \
                else (math.nan, math.nan)
        else:
            lo, hi = hpd_interval(values, hpd_mass)
        rows.append(SummaryRow(
            query=query,
            mean=float(values.mean()) if values.size else math.nan,
            median=float(np.median(values)) if values.size else math.nan,
            hpd_low=lo, hpd_high=hi,
            n_draws=int(values.size),
            flags=tuple(flags),
        ))
    return rows


def write_summary_tsv(rows, store, path, json_mirror=None):
    """One row per query: query spec, mean, median, lo, hi, flags."""
    names = {
        OddsTarget.VARIANT: store.manifest.get("kept_variant_ids", []),
        OddsTarget.CATEGORY: store.manifest.get("category_names", []),
    }
    out = []
    header = ("target\tindex\tname\tscale\tA\tB\tmean\tmedian\t"
              "hpd80_low\thpd80_high\tn_draws\tflags")
    lines = [header]
    for row in rows:
        q = row.query
        if q.target is OddsTarget.TOPIC_CLUSTER:
            name = f"cluster_{q.index}"
        else:
            pool = names[q.target]
            name = pool[q.index] if q.index < len(pool) else str(q.index)
        rec = {
            "target": q.target.value, "index": q.index, "name": name,
            "scale": q.scale.value,
            "A": list(q.a), "B": list(q.b),
            "mean": row.mean, "median": row.median,
            "hpd80_low": row.hpd_low, "hpd80_high": row.hpd_high,
            "n_draws": row.n_draws, "flags": list(row.flags),
        }
        out.append(rec)
        lines.append("\t".join([
            q.target.value, str(q.index), name, q.scale.value,
            ",".join(map(str, q.a)), ",".join(map(str, q.b)),
            f"{row.mean:.6g}", f"{row.median:.6g}",
            f"{row.hpd_low:.6g}", f"{row.hpd_high:.6g}",
            str(row.n_draws), ";".join(row.flags),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if json_mirror:
        import json as _json

        with open(json_mirror, "w", encoding="utf-8") as fh:
            _json.dump(out, fh, indent=2)
            fh.write("\n")
    return path
