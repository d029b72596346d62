"""Ingest sparse mutation data and meta-feature maps; build the design
matrices X, M, X-tilde, U, V = XU; screen residual-effect variants; and
simulate datasets from the model's own generative process.

File formats (UTF-8, LF, tab-separated, ids are case-sensitive strings):
  variant file : one line per nonzero `tumor_id<TAB>variant_id`; optional
                 header `#tumors=<N> variants=<J>`.
  label file   : `tumor_id<TAB>class_name`; optional header
                 `#classes=<name>,<name>,...` fixing the admissible classes
                 and their order.
  map file     : `variant_id<TAB>source_name<TAB>category_name`.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DomainError


@dataclass(frozen=True)
class VariantDataset:
    """Sparse binary tumor x variant matrix with burdens and class labels.

    Labels are stored 0-based; `class_names[labels[n]]` is the class of
    tumor n.  Tumors with zero burden are dropped at load time and counted
    in `n_dropped`.
    """

    X: sp.csr_matrix                 # N x J binary, sorted, deduplicated
    burdens: np.ndarray              # M_n = row sums, all >= 1
    labels: np.ndarray               # in [0, K)
    tumor_ids: list
    variant_ids: list
    class_names: list
    n_dropped: int = 0

    @property
    def n_tumors(self):
        return self.X.shape[0]

    @property
    def n_variants(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.class_names)

    def validate(self):
        if self.X.shape != (len(self.tumor_ids), len(self.variant_ids)):
            raise DataError("X shape inconsistent with id lists")
        if np.any(self.burdens < 1):
            raise DataError("retained tumors must have burden >= 1")
        recomputed = np.asarray(self.X.sum(axis=1)).ravel()
        if not np.array_equal(recomputed, self.burdens):
            raise DataError("stored burdens disagree with X row sums")
        if self.X.nnz and (self.X.data.min() < 1 or self.X.data.max() > 1):
            raise DataError("X entries must be binary")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise DataError("labels out of range")

    def subset(self, rows):
        rows = np.asarray(rows)
        return VariantDataset(
            X=self.X[rows],
            burdens=self.burdens[rows],
            labels=self.labels[rows],
            tumor_ids=[self.tumor_ids[i] for i in rows],
            variant_ids=self.variant_ids,
            class_names=self.class_names,
            n_dropped=0,
        )


@dataclass(frozen=True)
class MetaDesign:
    """Variant->category one-hot map U plus the derived count matrices."""

    U: sp.csr_matrix                 # J x P one-hot (single source)
    V: np.ndarray                    # N x P integer, V = X @ U exactly
    Xnorm: sp.csr_matrix             # rows of X divided by M_n
    Vnorm: np.ndarray                # rows of V divided by M_n
    source: str
    category_names: list

    @property
    def n_categories(self):
        return len(self.category_names)

    def subset(self, rows):
        rows = np.asarray(rows)
        return MetaDesign(
            U=self.U,
            V=self.V[rows],
            Xnorm=self.Xnorm[rows],
            Vnorm=self.Vnorm[rows],
            source=self.source,
            category_names=self.category_names,
        )


@dataclass(frozen=True)
class ScreenReport:
    """Mutual-information screen: indices kept for residual variant effects."""

    kept: np.ndarray                 # indices of the top-J0 variants, rank order
    mi_scores: np.ndarray            # length J, natural-log plug-in MI
    threshold_rank: int              # J0 = number kept


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().split("\n")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_labels(path):
    lines = _read_lines(path)
    class_order = None
    pairs = {}
    order = []
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#classes="):
                class_order = [c for c in line[len("#classes="):].split(",") if c]
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataError("malformed label line", line=i, path=path)
        tumor, cls = parts
        if tumor in pairs:
            raise DataError(f"duplicate tumor id {tumor!r}", line=i, path=path)
        if class_order is not None and cls not in class_order:
            raise DataError(f"unknown class label {cls!r}", line=i, path=path)
        pairs[tumor] = cls
        order.append(tumor)
    if not pairs:
        raise DataError(f"label file {path} is empty")
    if class_order is None:
        class_order = []
        for tumor in order:
            if pairs[tumor] not in class_order:
                class_order.append(pairs[tumor])
    return order, pairs, class_order


def load_dataset(variant_file, label_file):
    """Build a VariantDataset from a variant file and a label file.

    Tumors with zero mutations are dropped (X-tilde is undefined for them)
    and counted in the result's `n_dropped`.
    """
    tumor_order, tumor_class, class_names = _parse_labels(label_file)

    lines = _read_lines(variant_file)
    seen = set()
    coords = []
    variant_set = set()
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataError("malformed variant line", line=i, path=variant_file)
        tumor, variant = parts
        if tumor not in tumor_class:
            raise DataError(f"tumor {tumor!r} has no label", line=i, path=variant_file)
        if (tumor, variant) in seen:
            continue
        seen.add((tumor, variant))
        coords.append((tumor, variant))
        variant_set.add(variant)

    variant_ids = sorted(variant_set)
    vindex = {v: j for j, v in enumerate(variant_ids)}
    mutated = {t for t, _ in coords}
    kept_tumors = [t for t in tumor_order if t in mutated]
    n_dropped = len(tumor_order) - len(kept_tumors)
    tindex = {t: n for n, t in enumerate(kept_tumors)}

    rows = np.fromiter((tindex[t] for t, _ in coords), dtype=np.int64, count=len(coords))
    cols = np.fromiter((vindex[v] for _, v in coords), dtype=np.int64, count=len(coords))
    X = sp.csr_matrix(
        (np.ones(len(coords), dtype=np.int64), (rows, cols)),
        shape=(len(kept_tumors), len(variant_ids)),
    )
    X.sum_duplicates()
    X.sort_indices()

    ds = VariantDataset(
        X=X,
        burdens=np.asarray(X.sum(axis=1)).ravel().astype(np.int64),
        labels=np.array([class_names.index(tumor_class[t]) for t in kept_tumors],
                        dtype=np.int64),
        tumor_ids=kept_tumors,
        variant_ids=variant_ids,
        class_names=class_names,
        n_dropped=n_dropped,
    )
    ds.validate()
    return ds


def parse_map_file(path):
    """Read a map file into {source: {variant_id: category}} dictionaries."""
    lines = _read_lines(path)
    sources = {}
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise DataError("malformed map line", line=i, path=path)
        variant, source, category = parts
        per = sources.setdefault(source, {})
        if variant in per and per[variant] != category:
            raise DataError(
                f"variant {variant!r} mapped to two categories in source {source!r}",
                line=i, path=path,
            )
        per[variant] = category
    if not sources:
        raise DataError(f"map file {path} is empty")
    return sources


def build_meta_design(ds, map_file, source=None):
    """Construct the one-hot meta-design U for one source and V = X @ U."""
    sources = parse_map_file(map_file)
    if source is None:
        if len(sources) != 1:
            raise ConfigError(
                f"map file has sources {sorted(sources)}; pass one explicitly"
            )
        source = next(iter(sources))
    if source not in sources:
        raise ConfigError(f"source {source!r} not present in map file")
    mapping = sources[source]

    missing = [v for v in ds.variant_ids if v not in mapping]
    if missing:
        head = ", ".join(missing[:10])
        raise DataError(
            f"{len(missing)} variant(s) missing from map for source {source!r}: {head}"
        )

    category_names = sorted(set(mapping[v] for v in ds.variant_ids))
    cindex = {c: p for p, c in enumerate(category_names)}
    cols = np.array([cindex[mapping[v]] for v in ds.variant_ids], dtype=np.int64)
    U = sp.csr_matrix(
        (np.ones(len(cols), dtype=np.int64), (np.arange(len(cols)), cols)),
        shape=(ds.n_variants, len(category_names)),
    )
    return meta_design_from_U(ds, U, source, category_names)


def meta_design_from_U(ds, U, source, category_names):
    if U.nnz and np.any(np.asarray(U.sum(axis=1)).ravel() != 1):
        raise DataError("U must be one-hot: exactly one category per variant")
    V = np.asarray((ds.X @ U).todense()).astype(np.int64)
    inv_m = 1.0 / ds.burdens.astype(float)
    Xnorm = sp.diags(inv_m) @ ds.X.astype(float)
    Vnorm = V * inv_m[:, None]
    return MetaDesign(
        U=U.tocsr(), V=V, Xnorm=Xnorm.tocsr(), Vnorm=Vnorm,
        source=source, category_names=list(category_names),
    )


def screen_variants(ds, cap=50):
    """Rank variants by plug-in mutual information with the class label.

    MI uses the empirical joint of the binary presence indicator and the
    class label, natural log, zero-count cells contributing zero.  The top
    `cap` variants are kept; ties break by ascending variant index.
    """
    if cap < 0:
        raise DomainError("cap must be >= 0")
    n = ds.n_tumors
    onehot = np.zeros((n, ds.n_classes))
    onehot[np.arange(n), ds.labels] = 1.0
    cnt1 = np.asarray((ds.X.T @ onehot))            # J x K tumors with variant
    class_tot = onehot.sum(axis=0)                  # K
    cnt0 = class_tot[None, :] - cnt1
    p1 = cnt1.sum(axis=1, keepdims=True) / n
    pk = class_tot[None, :] / n

    def term(cnt, marg):
        p = cnt / n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = p * (np.log(p) - np.log(marg) - np.log(pk))
        return np.where(cnt > 0, t, 0.0)

    mi = term(cnt1, p1).sum(axis=1) + term(cnt0, 1.0 - p1).sum(axis=1)
    mi = np.maximum(mi, 0.0)
    order = np.lexsort((np.arange(ds.n_variants), -mi))
    kept = order[: min(cap, ds.n_variants)]
    return ScreenReport(kept=kept, mi_scores=mi, threshold_rank=len(kept))


@dataclass
class SimConfig:
    """Configuration for the model-generative simulator."""

    n_tumors: int = 200
    n_classes: int = 3
    n_topics: int = 3
    n_categories: int = 20
    burden_low: int = 50
    burden_high: int = 150
    separation: float = 4.0          # scale of the class-separating topic effects
    dirichlet_topics: float = 0.5    # a_W: Dirichlet weight of topic rows
    dirichlet_exposures: float = 1.0  # a_H: Dirichlet weight of exposures
    alpha: np.ndarray | None = None
    theta: np.ndarray | None = None  # S x K override; default built from separation


def default_theta(n_topics, n_classes, separation):
    """Row-centered topic effects pairing topic s with class s mod K."""
    theta = np.full((n_topics, n_classes), -separation / n_classes)
    for s in range(n_topics):
        theta[s, s % n_classes] += separation
    return theta


def simulate_dataset(cfg, rng):
    """Draw a dataset from the generative layers of the model itself.

    Topics come from Dirichlet(a_W 1_P), exposures from Dirichlet(a_H 1_S),
    category counts from the exposure-mixed multinomial, and labels from the
    softmax layer with the true coefficients.  Returns the dataset, its
    meta-design, and the ground truth {H, W, theta, beta0, alpha}.
    """
    n, k = cfg.n_tumors, cfg.n_classes
    s, p = cfg.n_topics, cfg.n_categories
    if s >= p:
        raise ConfigError("topics must reduce dimension: require S < P")
    if cfg.burden_low < 1 or cfg.burden_high < cfg.burden_low:
        raise ConfigError("burden range must satisfy 1 <= low <= high")
    gen = rng.gen

    W = gen.dirichlet(np.full(p, cfg.dirichlet_topics), size=s)
    zeta = gen.dirichlet(np.full(s, cfg.dirichlet_exposures), size=n)
    burdens = gen.integers(cfg.burden_low, cfg.burden_high + 1, size=n)
    mix = zeta @ W
    V = np.vstack([gen.multinomial(m, q / q.sum()) for m, q in zip(burdens, mix)])

    # Variant pools per category; each tumor picks V_np distinct pool members.
    pool_sizes = np.maximum(V.max(axis=0), 1) + np.maximum(V.max(axis=0) // 2, 2)
    variant_ids, cat_of_variant = [], []
    offsets = np.zeros(p + 1, dtype=int)
    for j in range(p):
        offsets[j + 1] = offsets[j] + pool_sizes[j]
        variant_ids.extend(f"v{j:04d}_{i:04d}" for i in range(pool_sizes[j]))
        cat_of_variant.extend([j] * pool_sizes[j])
    rows, cols = [], []
    for i in range(n):
        for j in range(p):
            cnt = V[i, j]
            if cnt:
                chosen = gen.choice(pool_sizes[j], size=cnt, replace=False)
                rows.extend([i] * cnt)
                cols.extend(offsets[j] + chosen)
    X = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)),
        shape=(n, offsets[-1]),
    )
    X.sort_indices()

    theta = cfg.theta if cfg.theta is not None else default_theta(s, k, cfg.separation)
    theta = np.asarray(theta, dtype=float)
    alpha = np.zeros(k) if cfg.alpha is None else np.asarray(cfg.alpha, dtype=float)
    w_pinv = W.T @ np.linalg.inv(W @ W.T)
    omega = w_pinv @ theta
    vnorm = V / burdens[:, None]
    eta = alpha[None, :] + vnorm @ omega
    probs = np.exp(eta - eta.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = np.array([gen.choice(k, p=pr) for pr in probs], dtype=np.int64)

    class_names = [f"class_{i}" for i in range(k)]
    ds = VariantDataset(
        X=X,
        burdens=np.asarray(X.sum(axis=1)).ravel().astype(np.int64),
        labels=labels,
        tumor_ids=[f"t{i:05d}" for i in range(n)],
        variant_ids=variant_ids,
        class_names=class_names,
    )
    ds.validate()
    category_names = [f"cat_{j:04d}" for j in range(p)]
    U = sp.csr_matrix(
        (np.ones(len(cat_of_variant), dtype=np.int64),
         (np.arange(len(cat_of_variant)), np.array(cat_of_variant))),
        shape=(len(cat_of_variant), p),
    )
    md = meta_design_from_U(ds, U, "simulated", category_names)
    truth = {
        "H": zeta, "W": W, "theta": theta,
        "beta0": np.zeros((ds.n_variants, k)), "alpha": alpha,
    }
    return ds, md, truth


def write_dataset_files(ds, md, out_dir):
    """Write variant/label/map files for a dataset; byte-stable given inputs."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    vpath = os.path.join(out_dir, "variants.tsv")
    lpath = os.path.join(out_dir, "labels.tsv")
    mpath = os.path.join(out_dir, "map.tsv")
    coo = ds.X.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(vpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#tumors={ds.n_tumors} variants={ds.n_variants}\n")
        for i in order:
            fh.write(f"{ds.tumor_ids[coo.row[i]]}\t{ds.variant_ids[coo.col[i]]}\n")
    with open(lpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#classes=" + ",".join(ds.class_names) + "\n")
        for t, lab in zip(ds.tumor_ids, ds.labels):
            fh.write(f"{t}\t{ds.class_names[lab]}\n")
    ucsr = md.U.tocsr()
    with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
        for j in range(ds.n_variants):
            cat = int(ucsr.indices[ucsr.indptr[j]])
            fh.write(f"{ds.variant_ids[j]}\t{md.source}\t{md.category_names[cat]}\n")
    return vpath, lpath, mpath
