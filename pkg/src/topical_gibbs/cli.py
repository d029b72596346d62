"""Command-line surface: fit | predict | cv | identify | simulate | report,
plus `chain export` for CSV interoperability.

Configuration can come from a JSON document (sections fit/topic/logistic/
paths) or from a previously written manifest; command-line flags override
file values.  Every command writes a manifest echoing the fully resolved
configuration, so re-running from a manifest reproduces outputs.  Exit
codes: 0 success, 1 configuration error, 2 data error, 3 numerical abort
(checkpoint path printed).
"""

import argparse
import dataclasses
import datetime
import json
import os
import sys

import numpy as np

from . import chain as chain_io
from . import evaluate as ev
from . import inference as inf
from .data import (SimConfig, build_meta_design, load_dataset,
                   simulate_dataset, write_dataset_files)
from .errors import (ConfigError, DataError, DomainError, FitAborted,
                     NumericalError)
from .logistic import LogisticHyper
from .rng import RngStream
from .sampler import FitConfig, fit
from .topics import TopicHyper

CONFIG_SECTIONS = ("fit", "topic", "logistic", "paths")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if "config" in doc and "command" in doc:
        doc = doc["config"]               # manifest re-run
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section in CONFIG_SECTIONS:
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        allowed = _section_keys(section)
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(bad)}")
    return doc


def _section_keys(section):
    if section == "fit":
        return {f.name for f in dataclasses.fields(FitConfig)} - {"topic", "logistic"}
    if section == "topic":
        return {f.name for f in dataclasses.fields(TopicHyper)}
    if section == "logistic":
        return {f.name for f in dataclasses.fields(LogisticHyper)}
    return {"variants", "labels", "map", "source", "out"}


def resolve_fit_config(args):
    """defaults < config file < CLI flags, echoed back as sections."""
    doc = load_config_file(args.config) if getattr(args, "config", None) else {}
    fit_kw = dict(doc.get("fit", {}))
    topic_kw = dict(doc.get("topic", {}))
    logistic_kw = dict(doc.get("logistic", {}))
    paths = dict(doc.get("paths", {}))

    overrides = {
        "iterations": args.iterations, "burn_in": args.burn_in,
        "topic_update_every": args.topic_update_every, "thin": args.thin,
        "seed": args.seed, "screen_cap": args.screen_cap,
        "approximation": args.approximation,
    }
    for key, val in overrides.items():
        if val is not None:
            fit_kw[key] = val
    topic_overrides = {
        "n_topics": args.topics, "a_H": args.a_h, "b_H": args.b_h,
        "a_W": args.a_w, "b_W": args.b_w, "block_size": args.block_size,
        "max_retries": args.max_retries,
    }
    for key, val in topic_overrides.items():
        if val is not None:
            topic_kw[key] = val
    logistic_overrides = {
        "tau0_alpha": args.tau0_alpha, "a_lambda": args.a_lambda,
        "b_lambda": args.b_lambda,
    }
    for key, val in logistic_overrides.items():
        if val is not None:
            logistic_kw[key] = val
    for key in ("variants", "labels", "map", "source", "out"):
        val = getattr(args, key.replace("map", "map_file") if key == "map" else key,
                      None)
        if val is not None:
            paths[key] = val
    try:
        cfg = FitConfig(topic=TopicHyper(**topic_kw),
                        logistic=LogisticHyper(**logistic_kw), **fit_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, paths


def _add_fit_flags(sub, with_paths=True):
    sub.add_argument("--config", help="JSON config or manifest to start from")
    sub.add_argument("--iterations", type=int, default=None,
                     help="Gibbs iterations after burn-in (default 20000)")
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None,
                     help="discarded initial iterations (default 1000)")
    sub.add_argument("--topic-update-every", dest="topic_update_every",
                     type=int, default=None,
                     help="topic-block cadence in iterations (default 10)")
    sub.add_argument("--thin", type=int, default=None,
                     help="keep every thin-th iteration (default 10)")
    sub.add_argument("--seed", type=int, default=None,
                     help="root seed for all randomness (default 0)")
    sub.add_argument("--screen-cap", dest="screen_cap", type=int, default=None,
                     help="max residual-effect variants kept (default 50)")
    sub.add_argument("--topics", type=int, default=None,
                     help="number of latent topics S (default 50)")
    sub.add_argument("--a-h", dest="a_h", type=float, default=None,
                     help="exposure Gamma shape a_H (default 1)")
    sub.add_argument("--b-h", dest="b_h", type=float, default=None,
                     help="exposure Gamma rate b_H (default 1)")
    sub.add_argument("--a-w", dest="a_w", type=float, default=None,
                     help="topic Gamma shape a_W (default 0.5)")
    sub.add_argument("--b-w", dest="b_w", type=float, default=None,
                     help="topic Gamma rate b_W (default 0.5)")
    sub.add_argument("--block-size", dest="block_size", type=int, default=None,
                     help="H-row Metropolis block size (default 10 when S>=50)")
    sub.add_argument("--max-retries", dest="max_retries", type=int, default=None,
                     help="Metropolis attempts per block (default 3, cap 25)")
    sub.add_argument("--tau0-alpha", dest="tau0_alpha", type=float, default=None,
                     help="intercept prior sd (default 10)")
    sub.add_argument("--a-lambda", dest="a_lambda", type=float, default=None,
                     help="lambda^2 Gamma shape (default 0.01)")
    sub.add_argument("--b-lambda", dest="b_lambda", type=float, default=None,
                     help="lambda^2 Gamma rate (default 0.01)")
    sub.add_argument("--approximation", choices=["A1A2", "A1Only"], default=None,
                     help="sampler mode (default A1A2)")
    if with_paths:
        sub.add_argument("--variants", help="training variant file")
        sub.add_argument("--labels", help="training label file")
        sub.add_argument("--map", dest="map_file", help="meta-feature map file")
        sub.add_argument("--source", help="meta-feature source name")
        sub.add_argument("--out", help="output directory")


def _require(paths, *keys):
    missing = [k for k in keys if not paths.get(k)]
    if missing:
        raise ConfigError(f"missing required path(s): {', '.join(missing)}")


def _digests(paths, keys):
    out = {}
    for key in keys:
        path = paths.get(key)
        if path and os.path.exists(path):
            out[key] = chain_io.file_digest(path)
    return out


def _write_manifest(out_path, command, config_sections, inputs):
    manifest = {
        "version": chain_io.FORMAT_VERSION,
        "command": command,
        "config": config_sections,
        "inputs": inputs,
        "created_at": _utc_now(),
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _config_sections(cfg, paths):
    fit_kw = cfg.to_dict()
    topic_kw = fit_kw.pop("topic")
    logistic_kw = fit_kw.pop("logistic")
    return {"fit": fit_kw, "topic": topic_kw, "logistic": logistic_kw,
            "paths": dict(paths)}


def cmd_fit(args):
    cfg, paths = resolve_fit_config(args)
    _require(paths, "variants", "labels", "map", "out")
    ds = load_dataset(paths["variants"], paths["labels"])
    md = build_meta_design(ds, paths["map"], source=paths.get("source"))
    digests = _digests(paths, ("variants", "labels", "map"))
    out_dir = paths["out"]
    os.makedirs(out_dir, exist_ok=True)
    store = fit(ds, md, cfg, input_digests=digests, checkpoint_dir=out_dir)
    store.manifest["created_at"] = _utc_now()
    chain_io.save_chain(store, out_dir)
    sections = _config_sections(cfg, paths)
    _write_manifest(os.path.join(out_dir, "run_manifest.json"), "fit",
                    sections, digests)
    if ds.n_dropped:
        print(f"dropped {ds.n_dropped} zero-burden tumor(s)")
    print(f"stored {len(store.records)} records in {out_dir}")
    return 0


def cmd_predict(args):
    if not args.chain or not args.variants or not args.map_file or not args.out:
        raise ConfigError("predict needs --chain, --variants, --map, --out")
    store = chain_io.load_chain(args.chain)
    pred = ev.predict(store, args.variants, args.map_file)
    lines = ["tumor_id\t" + "\t".join(pred.class_names)]
    for tid, row in zip(pred.tumor_ids, pred.probs):
        lines.append(tid + "\t" + "\t".join(f"{p:.10g}" for p in row))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(args.out + ".manifest.json", "predict",
                    {"chain": args.chain, "variants": args.variants,
                     "map": args.map_file, "out": args.out},
                    _digests({"variants": args.variants, "map": args.map_file},
                             ("variants", "map")))
    print(f"wrote predictions for {len(pred.tumor_ids)} tumors to {args.out}")
    return 0


def cmd_cv(args):
    cfg, paths = resolve_fit_config(args)
    _require(paths, "variants", "labels", "map", "out")
    jobs = args.jobs
    cap = os.environ.get("TOPICAL_GIBBS_THREADS")
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    ds = load_dataset(paths["variants"], paths["labels"])
    md = build_meta_design(ds, paths["map"], source=paths.get("source"))
    rows = ev.cross_validate(ds, md, cfg, folds=args.folds,
                             replications=args.replications,
                             rng=RngStream(cfg.seed, 1000), jobs=jobs)
    ev.write_cv_tsv(rows, paths["out"])
    sections = _config_sections(cfg, paths)
    sections["fit"]["folds"] = args.folds
    sections["fit"]["replications"] = args.replications
    _write_manifest(paths["out"] + ".manifest.json", "cv", sections,
                    _digests(paths, ("variants", "labels", "map")))
    print(f"wrote CV table to {paths['out']}")
    return 0


def cmd_identify(args):
    if not args.chain or not args.out:
        raise ConfigError("identify needs --chain and --out")
    store = chain_io.load_chain(args.chain)
    rng = RngStream(args.seed, 42)
    k_range = None
    if args.k_min is not None or args.k_max is not None:
        s = store.dims["S"]
        k_range = range(args.k_min or 2, (args.k_max or 2 * s) + 1)
    ident = inf.identify_topics(store, rng, pca_dims=args.pca_dims,
                                outlier_knn=args.knn, k_range=k_range)
    prefix = args.out
    with open(prefix + "topics.tsv", "w", encoding="utf-8", newline="\n") as fh:
        cats = store.manifest["category_names"]
        fh.write("cluster\t" + "\t".join(cats) + "\n")
        for g, center in enumerate(ident.centers):
            fh.write(f"{g}\t" + "\t".join(f"{w:.10g}" for w in center) + "\n")
    k = store.dims["K"]
    queries = [
        inf.one_vs_rest_query(cls, k, inf.OddsTarget.TOPIC_CLUSTER, g,
                              scale=inf.OddsScale.PER_SD)
        for g in range(ident.n_clusters) for cls in range(k)
    ]
    rows = inf.posterior_summary(store, ident, queries, hpd_mass=args.hpd_mass)
    inf.write_summary_tsv(rows, store, prefix + "summary.tsv",
                          json_mirror=prefix + "summary.json")
    _write_manifest(prefix + "manifest.json", "identify",
                    {"chain": args.chain, "pca_dims": args.pca_dims,
                     "knn": args.knn, "hpd_mass": args.hpd_mass,
                     "seed": args.seed}, {})
    print(f"identified k*={ident.n_clusters} topic clusters "
          f"(outlier fraction {ident.outlier_fraction:.3f})")
    return 0


def cmd_simulate(args):
    if not args.out:
        raise ConfigError("simulate needs --out")
    cfg = SimConfig(
        n_tumors=args.n, n_classes=args.classes, n_topics=args.topics,
        n_categories=args.categories, burden_low=args.burden_low,
        burden_high=args.burden_high, separation=args.separation,
    )
    ds, md, truth = simulate_dataset(cfg, RngStream(args.seed, 7))
    paths = write_dataset_files(ds, md, args.out)
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump({k: np.asarray(v).tolist() for k, v in truth.items()},
                  fh, sort_keys=True)
        fh.write("\n")
    _write_manifest(os.path.join(args.out, "manifest.json"), "simulate",
                    {"n": args.n, "classes": args.classes,
                     "topics": args.topics, "categories": args.categories,
                     "burden_low": args.burden_low,
                     "burden_high": args.burden_high,
                     "separation": args.separation, "seed": args.seed}, {})
    print("wrote " + ", ".join(paths))
    return 0


def _read_composition(path):
    weights = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError("expected `category<TAB>weight`", line=i, path=path)
            weights[parts[0]] = float(parts[1])
    return weights


def cmd_report(args):
    lines = ["metric\tinputs\tvalue\tflags"]
    if args.tv:
        a, b = (_read_composition(p) for p in args.tv)
        cats = sorted(set(a) | set(b))
        w1 = np.array([a.get(c, 0.0) for c in cats])
        w2 = np.array([b.get(c, 0.0) for c in cats])
        val = ev.tv_distance(w1, w2)
        lines.append(f"tv_distance\t{args.tv[0]},{args.tv[1]}\t{val:.10g}\t")
    if args.spearman:
        comp, score = [], []
        with open(args.spearman, "r", encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError("expected `category<TAB>composition<TAB>score`",
                                    line=i, path=args.spearman)
                comp.append(float(parts[1]))
                score.append(float(parts[2]))
        rho = ev.correlation_report(np.array(comp), np.array(score))
        flag = "undefined" if np.isnan(rho) else ""
        value = "NA" if np.isnan(rho) else f"{rho:.10g}"
        lines.append(f"spearman_rho\t{args.spearman}\t{value}\t{flag}")
    if len(lines) == 1:
        raise ConfigError("report needs --tv and/or --spearman")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        _write_manifest(args.out + ".manifest.json", "report",
                        {"tv": args.tv, "spearman": args.spearman}, {})
    sys.stdout.write(text)
    return 0


def cmd_chain_export(args):
    if not args.chain or not args.csv:
        raise ConfigError("chain export needs --chain and --csv")
    written = chain_io.export_csv(args.chain, args.csv)
    print(f"wrote {len(written)} CSV files to {args.csv}")
    return 0


def build_parser():
    parser = _Parser(
        prog="topical-gibbs",
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the model and store the chain",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="posterior-predictive class probabilities",
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_pred.add_argument("--chain", help="chain archive directory")
    p_pred.add_argument("--variants", help="test variant file")
    p_pred.add_argument("--map", dest="map_file", help="meta-feature map file")
    p_pred.add_argument("--out", help="output prediction TSV")
    p_pred.set_defaults(func=cmd_predict)

    p_cv = sub.add_parser("cv", help="stratified cross-validated PR AUC",
                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_fit_flags(p_cv)
    p_cv.add_argument("--folds", type=int, default=10,
                      help="stratified folds")
    p_cv.add_argument("--replications", type=int, default=1,
                      help="independent CV replications")
    p_cv.add_argument("--jobs", type=int, default=1,
                      help="parallel fold workers (capped by TOPICAL_GIBBS_THREADS)")
    p_cv.set_defaults(func=cmd_cv)

    p_id = sub.add_parser("identify", help="cluster topic draws and summarize odds",
                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_id.add_argument("--chain", help="chain archive directory")
    p_id.add_argument("--out", help="output prefix")
    p_id.add_argument("--pca-dims", dest="pca_dims", type=int, default=50,
                      help="principal components kept before clustering")
    p_id.add_argument("--knn", type=int, default=10,
                      help="neighbors for outlier filtering")
    p_id.add_argument("--hpd-mass", dest="hpd_mass", type=float, default=0.8,
                      help="HPD interval mass")
    p_id.add_argument("--k-min", dest="k_min", type=int, default=None,
                      help="smallest k scanned (default 2)")
    p_id.add_argument("--k-max", dest="k_max", type=int, default=None,
                      help="largest k scanned (default 2S)")
    p_id.add_argument("--seed", type=int, default=0, help="clustering seed")
    p_id.set_defaults(func=cmd_identify)

    p_sim = sub.add_parser("simulate", help="draw a dataset from the model",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--n", type=int, default=200, help="tumors")
    p_sim.add_argument("--classes", type=int, default=3, help="classes K")
    p_sim.add_argument("--topics", type=int, default=3, help="true topics S")
    p_sim.add_argument("--categories", type=int, default=20, help="categories P")
    p_sim.add_argument("--burden-low", dest="burden_low", type=int, default=50,
                       help="minimum burden")
    p_sim.add_argument("--burden-high", dest="burden_high", type=int, default=150,
                       help="maximum burden")
    p_sim.add_argument("--separation", type=float, default=4.0,
                       help="class-separation scale of the true topic effects")
    p_sim.add_argument("--seed", type=int, default=0, help="simulation seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="TV-distance / Spearman report table",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_rep.add_argument("--tv", nargs=2, metavar=("A", "B"),
                       help="two topic-composition TSV files")
    p_rep.add_argument("--spearman", metavar="PAIRS",
                       help="category/composition/score TSV file")
    p_rep.add_argument("--out", help="optional output TSV")
    p_rep.set_defaults(func=cmd_report)

    p_chain = sub.add_parser("chain", help="chain archive utilities",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    chain_sub = p_chain.add_subparsers(dest="chain_command", required=True)
    p_exp = chain_sub.add_parser("export", help="export records as plain CSV",
                                 formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_exp.add_argument("--chain", help="chain archive directory")
    p_exp.add_argument("--csv", help="output directory for CSV files")
    p_exp.set_defaults(func=cmd_chain_export)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FitAborted as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        print(f"checkpoint: {exc.checkpoint_path}", file=sys.stderr)
        return 3
    except (NumericalError, DomainError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
