"""Full-Bayes ensemble prediction for new tumors, one-vs-rest PR-AUC
evaluation, stratified cross-validation, and small correlation reports.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .data import parse_map_file
from .inference import descale_coefficients


@dataclass
class PredictionMatrix:
    probs: np.ndarray                 # N_test x K, rows sum to 1
    tumor_ids: list
    class_names: list


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    auc: float
    prevalence: float


def _test_design(test_tumors, manifest, mapping):
    """Category proportions and screened-variant proportions per test tumor.

    Novel variants (absent from training) contribute through their mapped
    category with zero residual effect; a variant missing from the map is an
    error listing the offending ids.
    """
    categories = manifest["category_names"]
    cindex = {c: p for p, c in enumerate(categories)}
    kept_ids = manifest["kept_variant_ids"]
    kindex = {v: j for j, v in enumerate(kept_ids)}

    n = len(test_tumors)
    vnorm = np.zeros((n, len(categories)))
    xnorm_kept = np.zeros((n, len(kept_ids)))
    missing = []
    for i, (_, variants) in enumerate(test_tumors):
        m = len(variants)
        if m == 0:
            continue
        for v in variants:
            cat = mapping.get(v)
            if cat is None:
                missing.append(v)
                continue
            cat_idx = cindex.get(cat)
            if cat_idx is not None:
                vnorm[i, cat_idx] += 1.0 / m
            j = kindex.get(v)
            if j is not None:
                xnorm_kept[i, j] += 1.0 / m
    if missing:
        head = ", ".join(sorted(set(missing))[:10])
        raise DataError(f"test variants missing from map: {head}")
    return xnorm_kept, vnorm


def predict_arrays(store, xnorm_kept, vnorm):
    """Across-draw average of softmax linear predictions."""
    if not store.records:
        raise ConfigError("chain has no stored draws to predict from")
    n = vnorm.shape[0]
    k = len(store.manifest["class_names"])
    probs = np.zeros((n, k))
    for rec in store.records:
        descaled = descale_coefficients(rec)
        eta = rec.alpha[None, :] + vnorm @ descaled["omega"]
        if xnorm_kept.size:
            eta = eta + xnorm_kept @ descaled["beta0"]
        m = eta.max(axis=1, keepdims=True)
        p = np.exp(eta - m)
        probs += p / p.sum(axis=1, keepdims=True)
    probs /= len(store.records)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def predict(store, test_file, map_file):
    """Posterior-predictive class probabilities for the tumors in test_file."""
    from .data import _read_lines

    mapping_all = parse_map_file(map_file)
    source = store.manifest.get("source")
    if source not in mapping_all:
        raise DataError(f"map file lacks training source {source!r}")
    mapping = mapping_all[source]

    tumors = {}
    order = []
    for i, raw in enumerate(_read_lines(test_file), start=1):
        line = raw.rstrip("\r")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not all(parts):
            raise DataError("malformed variant line", line=i, path=test_file)
        tumor, variant = parts
        if tumor not in tumors:
            tumors[tumor] = set()
            order.append(tumor)
        tumors[tumor].add(variant)
    test_tumors = [(t, sorted(tumors[t])) for t in order]
    xnorm_kept, vnorm = _test_design(test_tumors, store.manifest, mapping)
    probs = predict_arrays(store, xnorm_kept, vnorm)
    return PredictionMatrix(probs=probs, tumor_ids=order,
                            class_names=list(store.manifest["class_names"]))


def pr_auc(scores, positives):
    """Average-precision PR AUC with tie blocks handled atomically."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise DomainError("scores and positives must have equal length")
    n_pos = int(positives.sum())
    if n_pos == 0 or n_pos == positives.size:
        raise DomainError("PR AUC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = positives[order].astype(float)
    # end indices of tie blocks
    boundary = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(boundary, s.size - 1)
    tp = np.cumsum(y)[ends]
    count = ends + 1.0
    recall = tp / n_pos
    precision = tp / count
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    auc = float(((recall - prev_recall) * precision).sum())
    return PRCurve(recall=recall, precision=precision, auc=auc,
                   prevalence=n_pos / positives.size)


@dataclass
class FoldAssignment:
    fold_of: np.ndarray
    n_folds: int
    small_classes: tuple = ()


def stratified_folds(labels, folds=10, rng=None):
    """Per-class round-robin fold assignment after a seeded shuffle."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    fold_of = np.zeros(labels.size, dtype=int)
    small = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if rng is not None:
            idx = idx[rng.gen.permutation(idx.size)]
        fold_of[idx] = np.arange(idx.size) % folds
        if idx.size < folds:
            small.append(int(cls))
    return FoldAssignment(fold_of=fold_of, n_folds=folds,
                          small_classes=tuple(small))


@dataclass
class CvRow:
    replication: int
    fold_set: str
    class_name: str
    pr_auc: float
    null_baseline: float
    sd: float = math.nan
    note: str = ""


def cross_validate(ds, md, cfg, folds=10, replications=1, rng=None, jobs=1):
    """Stratified K-fold CV of the full fit-and-predict pipeline.

    Per replication the held-out predictions of all folds are pooled, then
    one-vs-rest PR AUC is computed per class and macro-averaged; rows carry
    the class-prevalence null baselines.  `jobs > 1` runs folds in threads
    with a deterministic merge.
    """
    from dataclasses import replace as dc_replace

    from . import sampler as _sampler

    if rng is None:
        from .rng import RngStream

        rng = RngStream(cfg.seed, 1000)
    k = ds.n_classes
    vindex = {v: j for j, v in enumerate(ds.variant_ids)}
    per_rep_auc = np.zeros((replications, k))
    rows = []
    failures = []
    for rep in range(replications):
        rep_rng = rng.substream(rep)
        assignment = stratified_folds(ds.labels, folds=folds, rng=rep_rng)
        probs = np.full((ds.n_tumors, k), np.nan)

        def run_fold(f):
            train_idx = np.flatnonzero(assignment.fold_of != f)
            test_idx = np.flatnonzero(assignment.fold_of == f)
            fold_cfg = dc_replace(cfg, seed=int(cfg.seed + 7919 * rep + f))
            ds_train = ds.subset(train_idx)
            md_train = md.subset(train_idx)
            store = _sampler.fit(ds_train, md_train, fold_cfg)
            kept_ids = store.manifest["kept_variant_ids"]
            kept_global = [vindex[v] for v in kept_ids]
            xk = np.asarray(md.Xnorm[test_idx][:, kept_global].todense())
            vn = md.Vnorm[test_idx]
            return f, test_idx, predict_arrays(store, xk, vn)

        results = []
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_fold, f) for f in range(folds)]
                for fut in futures:
                    try:
                        results.append(fut.result())
                    except Exception as exc:  # noqa: BLE001
                        failures.append((rep, str(exc)))
        else:
            for f in range(folds):
                try:
                    results.append(run_fold(f))
                except Exception as exc:  # noqa: BLE001
                    failures.append((rep, f"fold {f}: {exc}"))
        for f, test_idx, p in sorted(results, key=lambda r: r[0]):
            probs[test_idx] = p

        complete = ~np.isnan(probs).any(axis=1)
        for cls in range(k):
            y = ds.labels[complete] == cls
            note = "" if complete.all() else "incomplete"
            try:
                curve = pr_auc(probs[complete, cls], y)
                auc, base = curve.auc, curve.prevalence
            except DomainError:
                auc, base, note = math.nan, float(y.mean()), "degenerate"
            per_rep_auc[rep, cls] = auc
            rows.append(CvRow(rep, "pooled", ds.class_names[cls], auc, base,
                              note=note))
        rows.append(CvRow(rep, "pooled", "__macro__",
                          float(np.nanmean(per_rep_auc[rep])),
                          float(1.0 / k)))
    if replications > 1:
        for cls in range(k):
            rows.append(CvRow(-1, "mean", ds.class_names[cls],
                              float(np.nanmean(per_rep_auc[:, cls])),
                              float((ds.labels == cls).mean()),
                              sd=float(np.nanstd(per_rep_auc[:, cls], ddof=1))))
        macro = np.nanmean(per_rep_auc, axis=1)
        rows.append(CvRow(-1, "mean", "__macro__", float(macro.mean()),
                          float(1.0 / k), sd=float(macro.std(ddof=1))))
    for rep, msg in failures:
        rows.append(CvRow(rep, "error", "__fit__", math.nan, math.nan, note=msg))
    return rows


def write_cv_tsv(rows, path):
    header = "replication\tfold_set\tclass\tpr_auc\tnull_baseline\tsd\tnote"
    lines = [header]
    for r in rows:
        lines.append("\t".join([
            str(r.replication), r.fold_set, r.class_name,
            f"{r.pr_auc:.6g}", f"{r.null_baseline:.6g}",
            f"{r.sd:.6g}" if not math.isnan(r.sd) else "",
            r.note,
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def correlation_report(values, scores):
    """Spearman rank correlation with average ranks; NaN when undefined."""
    values = np.asarray(values, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if values.shape != scores.shape:
        raise DomainError("vectors must have equal length")
    finite = np.isfinite(values) & np.isfinite(scores)
    if finite.sum() < 3:
        raise DomainError("need at least 3 finite pairs")
    v, s = values[finite], scores[finite]
    if np.all(v == v[0]) or np.all(s == s[0]):
        return math.nan
    from scipy.stats import spearmanr

    return float(spearmanr(v, s).statistic)


def tv_distance(w1, w2):
    """Total variation distance between two topic compositions."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if w1.shape != w2.shape:
        raise DomainError("compositions must share the same categories")
    for w in (w1, w2):
        if abs(w.sum() - 1.0) > 1e-8:
            raise DomainError("compositions must sum to 1 within 1e-8")
    return float(0.5 * np.abs(w1 - w2).sum())
