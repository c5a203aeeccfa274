"""Command-line interface: one executable for the whole pipeline.

Subcommands: generate, pretrain, train, evaluate, estimate-k,
calibrate-report, ablate. Config precedence is CLI flags > JSON config file
> built-in defaults. Every run writes a run_manifest.json with the resolved
config, seed, input digests, and output paths, sufficient to reproduce the
run single-threaded.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import estimate_k, kmeans
from .data import Split, load_feature_file, save_feature_file, split_summary
from .encoder import load_checkpoint, save_checkpoint
from .evaluation import MetricsReport, prototype_distance_report
from .prototypes import (
    PrototypeKind,
    PrototypeSet,
    calibrate,
    labeled_prototypes,
    load_prototype_file,
    match_prototypes,
    save_prototype_file,
    unlabeled_prototypes,
)
from .synthetic import ACCEPTANCE_CONFIG, SyntheticConfig, make_synthetic
from .trainer import (
    ABLATION_VARIANTS,
    TrainConfig,
    evaluate_head,
    featurize,
    new_head,
    pretrain,
    resolve_k_clusters,
    run_ablation,
    train,
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seed, inputs, outputs):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _pct(x: float) -> str:
    return "nan" if math.isnan(x) else f"{100.0 * x:.2f}"


def _print_metrics(report: MetricsReport) -> None:
    print(
        f"H-score {_pct(report.h_score)}  Known {_pct(report.known_acc)}  "
        f"Novel {_pct(report.novel_acc)}  Overall {_pct(report.overall_acc)}  "
        f"Pseudo {_pct(report.pseudo_label_acc)}"
    )


def _write_metrics_files(report: MetricsReport, out_dir: Path, stem: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / f"{stem}.json"
    jpath.write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    tpath = out_dir / f"{stem}.tsv"
    with tpath.open("w", encoding="utf-8") as fh:
        fh.write("metric\tvalue_pct\n")
        for key in ("h_score", "known_acc", "novel_acc", "overall_acc", "pseudo_label_acc"):
            fh.write(f"{key}\t{_pct(getattr(report, key))}\n")
        fh.write(f"proto_dist_before\t{report.proto_dist_before:.6f}\n")
        fh.write(f"proto_dist_after\t{report.proto_dist_after:.6f}\n")
    return [jpath, tpath]


# ---------------------------------------------------------------------------
# config plumbing

_TRAIN_FLAG_FIELDS = {
    "k_top": int,
    "alpha": float,
    "beta": float,
    "tau": float,
    "epochs": int,
    "batch_size": int,
    "lr_pretrain": float,
    "lr_train": float,
    "seed": int,
    "early_stop_patience": int,
    "pretrain_epochs": int,
    "feature_dim": int,
    "dropout_rate": float,
    "aug_noise": float,
    "refresh_every": int,
    "weight_decay": float,
    "estimate_k_max": int,
    "drop_ratio": float,
    "kmeans_restarts": int,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for name, typ in _TRAIN_FLAG_FIELDS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    p.add_argument("--k-clusters", dest="k_clusters", default=None,
                   help="cluster count: an integer, 'true', 'estimate', or 'overcluster_1.2'")
    p.add_argument("--normalize-distances", dest="normalize_distances",
                   action="store_true", default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON file of config overrides")
    p.add_argument("--threads", type=int, default=1,
                   help="recorded in the manifest; computation is deterministic single-threaded")


def _parse_k_clusters(value):
    if value is None or isinstance(value, int):
        return value
    if value in ("true", "estimate", "overcluster_1.2"):
        return value
    try:
        return int(value)
    except ValueError:
        raise SystemExit(f"error: bad --k-clusters value {value!r}")


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    """Merge defaults < JSON config < CLI flags into a TrainConfig."""
    values = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot read config {args.config}: {exc}")
        field_names = {f.name for f in dataclasses.fields(TrainConfig)}
        bad = set(loaded) - field_names
        if bad:
            raise SystemExit(f"error: unknown config keys {sorted(bad)}")
        values.update(loaded)
    for name in list(_TRAIN_FLAG_FIELDS) + ["k_clusters", "normalize_distances"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if "hidden" in values:
        values["hidden"] = tuple(values["hidden"])
    if "k_clusters" in values:
        values["k_clusters"] = _parse_k_clusters(values["k_clusters"])
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"error: invalid configuration: {exc}")


def _config_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["hidden"] = list(d["hidden"])
    return d


def _load_dataset(path: str) -> "Dataset":
    try:
        return load_feature_file(path)
    except FileNotFoundError:
        raise SystemExit(f"error: no such file: {path}")
    except ValueError as exc:
        raise SystemExit(f"error: {path}: {exc}")


def _load_truth(path) -> PrototypeSet | None:
    if path is None:
        return None
    try:
        return load_prototype_file(path)
    except FileNotFoundError:
        raise SystemExit(f"error: no such file: {path}")
    except ValueError as exc:
        raise SystemExit(f"error: {path}: {exc}")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_generate(args) -> int:
    if args.preset == "acceptance":
        cfg = dataclasses.replace(ACCEPTANCE_CONFIG, seed=args.seed)
    else:
        cfg = SyntheticConfig(
            dim=args.dim,
            n_categories=args.categories,
            novel_fraction=args.novel_fraction,
            labeled_fraction=args.labeled_fraction,
            per_category_count=args.per_category,
            center_scale=args.center_scale,
            noise_sigma=args.noise_sigma,
            test_fraction=args.test_fraction,
            seed=args.seed,
            labeled_sampling=args.labeled_sampling,
        )
    ds, truth = make_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_feature_file(ds, out)
    truth_out = Path(args.truth_out) if args.truth_out else out.with_suffix(out.suffix + ".truth")
    save_prototype_file(truth, truth_out)
    summary = split_summary(ds)
    print(
        f"wrote {out} ({summary.n_total} instances, {summary.n_known} known + "
        f"{summary.n_novel} novel categories) and truth sidecar {truth_out}"
    )
    out_dir = Path(args.out_dir) if args.out_dir else out.parent
    _write_manifest(out_dir, "generate", dataclasses.asdict(cfg), cfg.seed, [], [out, truth_out])
    return 0


def _cmd_pretrain(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    head = pretrain(new_head(ds, cfg), ds, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "pretrained.json"
    save_checkpoint(head, ckpt)
    print(f"wrote {ckpt}")
    _write_manifest(out_dir, "pretrain", _config_dict(cfg), cfg.seed, [args.data], [ckpt])
    return 0


def _write_epoch_reports(reports, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("epoch\th_score\tknown\tnovel\toverall\tpseudo\tproto_before\tproto_after\n")
        for e, r in enumerate(reports):
            fh.write(
                f"{e}\t{_pct(r.h_score)}\t{_pct(r.known_acc)}\t{_pct(r.novel_acc)}"
                f"\t{_pct(r.overall_acc)}\t{_pct(r.pseudo_label_acc)}"
                f"\t{r.proto_dist_before:.6f}\t{r.proto_dist_after:.6f}\n"
            )


def _cmd_train(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    truth = _load_truth(args.truth)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    if args.variant != "full":
        report = run_ablation(args.variant, ds, cfg, truth=truth, loss_log=out_dir / "losses.tsv")
        _print_metrics(report)
        outputs += _write_metrics_files(report, out_dir, "metrics")
        outputs.append(out_dir / "losses.tsv")
    else:
        if args.checkpoint:
            head = load_checkpoint(args.checkpoint)
        else:
            head = pretrain(new_head(ds, cfg), ds, cfg)
            pre_path = out_dir / "pretrained.json"
            save_checkpoint(head, pre_path)
            outputs.append(pre_path)
        head, reports = train(head, ds, cfg, truth=truth, loss_log=out_dir / "losses.tsv")
        trained_path = out_dir / "trained.json"
        save_checkpoint(head, trained_path)
        epochs_path = out_dir / "epochs.tsv"
        _write_epoch_reports(reports, epochs_path)
        final = evaluate_head(head, ds, cfg, truth=truth)
        _print_metrics(final)
        outputs += [trained_path, epochs_path, out_dir / "losses.tsv"]
        outputs += _write_metrics_files(final, out_dir, "metrics")

    inputs = [args.data] + ([args.truth] if args.truth else []) + (
        [args.checkpoint] if args.checkpoint else []
    )
    _write_manifest(out_dir, "train", _config_dict(cfg), cfg.seed, inputs, outputs)
    return 0


def _cmd_evaluate(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    truth = _load_truth(args.truth)
    try:
        head = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise SystemExit(f"error: no such file: {args.checkpoint}")
    report = evaluate_head(head, ds, cfg, truth=truth, per_subset_mapping=args.per_subset_mapping)
    _print_metrics(report)
    out_dir = Path(args.out_dir)
    outputs = _write_metrics_files(report, out_dir, "metrics")
    _write_manifest(
        out_dir, "evaluate", _config_dict(cfg), cfg.seed,
        [args.data, args.checkpoint] + ([args.truth] if args.truth else []), outputs,
    )
    return 0


def _cmd_estimate_k(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    unlabeled = ds.split_indices(Split.UNLABELED)
    points = ds.embedding_matrix()[unlabeled if unlabeled.size else slice(None)]
    k_max = args.k_max or 2 * max(ds.n_categories, 1)
    k = estimate_k(points, k_max=k_max, drop_ratio=cfg.drop_ratio, seed=cfg.seed,
                   n_restarts=cfg.kmeans_restarts)
    print(k)
    out_dir = Path(args.out_dir)
    _write_manifest(
        out_dir, "estimate-k",
        {**_config_dict(cfg), "k_max": k_max, "estimate": k},
        cfg.seed, [args.data], [],
    )
    return 0


def _cmd_calibrate_report(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    truth = _load_truth(args.truth)
    X = ds.embedding_matrix()
    if args.checkpoint:
        head = load_checkpoint(args.checkpoint)
        feats = featurize(head, X, normalize=cfg.normalize_distances)
        truth_vecs = featurize(head, truth.vectors, normalize=cfg.normalize_distances) if truth else None
    else:
        feats = X
        truth_vecs = truth.vectors if truth else None

    unlabeled = ds.split_indices(Split.UNLABELED)
    k_clusters = resolve_k_clusters(cfg, ds, feats[unlabeled])
    cl = kmeans(feats[unlabeled], k_clusters, seed=(cfg.seed, 0xCA), n_restarts=cfg.kmeans_restarts)
    pl = labeled_prototypes(ds, feats)
    pu = unlabeled_prototypes(cl)
    mm = match_prototypes(pl, pu)
    pc, _ = calibrate(pu, pl, min(cfg.k_top, len(pl)), cfg.alpha)
    cat_for_cluster = mm.category_for_cluster()

    truth_pair = {}
    if truth_vecs is not None:
        truth_set = PrototypeSet(PrototypeKind.GROUND_TRUTH, truth_vecs, truth.ids)
        dist = prototype_distance_report(pu, pc, truth_set, mm)
        id_row = {int(t): r for r, t in enumerate(truth.ids)}
        truth_pair = {cl_id: id_row[t_id] for cl_id, t_id in dist.pairs}

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("cluster_id\tmatched_labeled_id\tdist_before\tdist_after\n")
        for row, cl_id in enumerate(pu.ids):
            matched = cat_for_cluster.get(int(cl_id), -1)
            if truth_vecs is not None and int(cl_id) in truth_pair:
                t = truth_pair[int(cl_id)]
                before = float(np.linalg.norm(pu.vectors[row] - truth_vecs[t]))
                after = float(np.linalg.norm(pc.vectors[row] - truth_vecs[t]))
                fh.write(f"{int(cl_id)}\t{matched}\t{before:.6f}\t{after:.6f}\n")
            else:
                fh.write(f"{int(cl_id)}\t{matched}\tnan\tnan\n")
    print(f"wrote {out}")
    out_dir = Path(args.out_dir) if args.out_dir else out.parent
    _write_manifest(
        out_dir, "calibrate-report", _config_dict(cfg), cfg.seed,
        [args.data] + ([args.truth] if args.truth else []) + (
            [args.checkpoint] if args.checkpoint else []
        ),
        [out],
    )
    return 0


def _cmd_ablate(args) -> int:
    cfg = build_train_config(args)
    ds = _load_dataset(args.data)
    truth = _load_truth(args.truth)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "ablation.tsv"
    with table.open("w", encoding="utf-8") as fh:
        fh.write("variant\th_score\tknown\tnovel\toverall\tpseudo\n")
        for variant in ABLATION_VARIANTS:
            report = run_ablation(variant, ds, cfg, truth=truth)
            fh.write(
                f"{variant}\t{_pct(report.h_score)}\t{_pct(report.known_acc)}"
                f"\t{_pct(report.novel_acc)}\t{_pct(report.overall_acc)}"
                f"\t{_pct(report.pseudo_label_acc)}\n"
            )
            print(f"{variant}: H {_pct(report.h_score)} Known {_pct(report.known_acc)} "
                  f"Novel {_pct(report.novel_acc)}")
    _write_manifest(out_dir, "ablate", _config_dict(cfg), cfg.seed, [args.data], [table])
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcdkit",
        description="Generalized category discovery over precomputed embeddings",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark feature file")
    g.add_argument("--preset", choices=["acceptance", "custom"], default="custom")
    g.add_argument("--out", required=True)
    g.add_argument("--truth-out", dest="truth_out", default=None)
    g.add_argument("--out-dir", dest="out_dir", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--categories", type=int, default=20)
    g.add_argument("--novel-fraction", dest="novel_fraction", type=float, default=0.25)
    g.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=0.1)
    g.add_argument("--per-category", dest="per_category", type=int, default=200)
    g.add_argument("--center-scale", dest="center_scale", type=float, default=1.0)
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.35)
    g.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.25)
    g.add_argument("--labeled-sampling", dest="labeled_sampling",
                   choices=["per-category", "global"], default="per-category")
    g.set_defaults(func=_cmd_generate)

    p = sub.add_parser("pretrain", help="supervised pretraining on the labeled split")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    t = sub.add_parser("train", help="full alignment training (pretrains if no checkpoint)")
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", dest="out_dir", required=True)
    t.add_argument("--checkpoint", default=None, help="pretrained checkpoint to start from")
    t.add_argument("--truth", default=None, help="truth sidecar for prototype diagnostics")
    t.add_argument("--variant", choices=list(ABLATION_VARIANTS), default="full")
    _add_train_flags(t)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a feature file")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--truth", default=None)
    e.add_argument("--out-dir", dest="out_dir", required=True)
    e.add_argument("--per-subset-mapping", dest="per_subset_mapping", action="store_true")
    _add_train_flags(e)
    e.set_defaults(func=_cmd_evaluate)

    k = sub.add_parser("estimate-k", help="estimate the category count by cluster filtering")
    k.add_argument("--data", required=True)
    k.add_argument("--k-max", dest="k_max", type=int, default=None)
    k.add_argument("--out-dir", dest="out_dir", default="runs")
    _add_train_flags(k)
    k.set_defaults(func=_cmd_estimate_k)

    c = sub.add_parser("calibrate-report", help="prototype calibration diagnostics TSV")
    c.add_argument("--data", required=True)
    c.add_argument("--checkpoint", default=None)
    c.add_argument("--truth", default=None)
    c.add_argument("--out", required=True)
    c.add_argument("--out-dir", dest="out_dir", default=None)
    _add_train_flags(c)
    c.set_defaults(func=_cmd_calibrate_report)

    a = sub.add_parser("ablate", help="run every objective variant")
    a.add_argument("--data", required=True)
    a.add_argument("--truth", default=None)
    a.add_argument("--out-dir", dest="out_dir", required=True)
    _add_train_flags(a)
    a.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
