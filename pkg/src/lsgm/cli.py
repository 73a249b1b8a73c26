"""Command-line pipeline: fit models, score datasets, evaluate detectors, and
export transition statistics.

Every command prints a JSON report to stdout that echoes its fully resolved
configuration (defaults included) for provenance. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, chain, metrics, mixture
from .errors import (
    FormatError,
    InvalidArgumentError,
    LsgmError,
    NotPositiveDefiniteError,
    TooLargeError,
    ZeroRowError,
)
from .io_formats import (
    load_bundle,
    load_manifest,
    load_model,
    read_npy,
    save_model,
    write_npy,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MODEL_KINDS = ("lsgm-gmm", "lsgm-dp", "mahalanobis", "softmax")


class UsageError(Exception):
    pass


def _config_echo(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        if isinstance(value, Path):
            value = str(value)
        out[key] = value
    return out


def _emit(report: dict, report_path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if report_path:
        Path(report_path).write_text(text + "\n")


def _check_layer_names(model_names, manifest_names) -> None:
    if tuple(model_names) != tuple(manifest_names):
        raise InvalidArgumentError(
            f"layer names differ between model {list(model_names)} "
            f"and manifest {list(manifest_names)}"
        )


def cmd_fit(args: argparse.Namespace) -> int:
    if args.model_kind == "softmax":
        raise UsageError("softmax has nothing to fit; use it directly with 'score'")
    manifest = load_manifest(args.manifest)
    if manifest.role != "train_in":
        raise UsageError(
            f"fit expects a train_in manifest, got role {manifest.role!r}"
        )
    bundle = load_bundle(manifest)

    if args.report is None:
        args.report = str(Path(args.out).with_suffix(".diagnostics.json"))
    report = {"command": "fit", "config": _config_echo(args)}

    if args.model_kind == "mahalanobis":
        if bundle.labels is None:
            raise InvalidArgumentError("labels required to fit mahalanobis")
        params = baselines.fit_mahalanobis(bundle.per_layer, bundle.labels)
        save_model(args.out, params, layer_names=bundle.layer_names)
        report["layers"] = [
            {
                "name": name,
                "num_classes": int(stats.class_means.shape[0]),
                "dim": int(stats.class_means.shape[1]),
                "ridge_used": stats.shared_cov_factor.ridge_used,
            }
            for name, stats in zip(bundle.layer_names, params.per_layer)
        ]
        _emit(report, args.report)
        return EXIT_OK

    layers = []
    diags = []
    for i, feats in enumerate(bundle.per_layer):
        layer_seed = args.seed + i
        if args.model_kind == "lsgm-gmm":
            if args.k is None:
                raise UsageError("--k is required for lsgm-gmm")
            layer, diag = mixture.fit_gmm_em(
                feats,
                k=args.k,
                seed=layer_seed,
                covariance_mode=args.covariance,
                max_iter=args.max_iter,
                tol=args.tol,
            )
        else:
            if args.truncation is None:
                raise UsageError("--truncation is required for lsgm-dp")
            config = mixture.DpConfig(
                truncation=args.truncation,
                concentration=args.concentration,
                prune_threshold=args.prune_threshold,
            )
            layer, diag = mixture.fit_dpgmm(
                feats,
                config,
                seed=layer_seed,
                max_iter=args.max_iter,
                tol=args.tol,
            )
        layers.append(layer)
        diags.append(diag)

    transitions = chain.estimate_transitions(
        layers,
        bundle.per_layer,
        assignment=args.assignment,
        smoothing=args.smoothing,
    )
    model = chain.LsgmModel(tuple(layers), tuple(transitions), bundle.layer_names)
    save_model(args.out, model)

    report["layers"] = [
        {
            "name": name,
            "components": layer.num_components,
            "effective_components": diag.effective_components,
            "iterations": diag.iterations,
            "converged": diag.converged,
            "objective_trace": [float(v) for v in diag.objective_trace],
            "warnings": diag.warnings,
        }
        for name, layer, diag in zip(bundle.layer_names, layers, diags)
    ]
    _emit(report, args.report)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    if (args.model is None) == (args.model_kind != "softmax"):
        raise UsageError("provide --model, or --model-kind softmax for logits")
    manifest = load_manifest(args.manifest)
    bundle = load_bundle(manifest)

    if args.model_kind == "softmax":
        if bundle.logits is None:
            raise InvalidArgumentError("manifest has no logits for softmax scoring")
        scores = baselines.max_softmax_scores_batch(bundle.logits)
        kind = "softmax"
    else:
        stored = load_model(args.model)
        _check_layer_names(stored.layer_names, bundle.layer_names)
        kind = stored.kind
        if stored.kind == "lsgm":
            scores = chain.score_features(stored.model, bundle.per_layer)
        else:
            params = stored.model
            per_layer = np.stack(
                [
                    baselines.mahalanobis_layer_scores_batch(params, i, feats)
                    for i, feats in enumerate(bundle.per_layer)
                ]
            )
            scores = params.layer_weights @ per_layer

    write_npy(args.out, scores.reshape(-1, 1))
    report = {
        "command": "score",
        "config": _config_echo(args),
        "model_kind": kind,
        "dataset": manifest.name,
        "count": int(scores.size),
        "mean": float(scores.mean()) if scores.size else None,
        "min": float(scores.min()) if scores.size else None,
        "max": float(scores.max()) if scores.size else None,
    }
    _emit(report, args.report)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    pos = read_npy(args.pos_scores).ravel()
    neg = read_npy(args.neg_scores).ravel()
    data = metrics.from_split(pos, neg)
    result = metrics.evaluate(data, tpr_target=args.tpr_target)
    report = {
        "command": "eval",
        "config": _config_echo(args),
        "units": "percent",
        "tnr_at_tpr": 100.0 * result.tnr_at_95_tpr,
        "auroc": 100.0 * result.auroc,
        "aupr": 100.0 * result.aupr,
        "n_pos": result.n_pos,
        "n_neg": result.n_neg,
    }
    _emit(report, args.report)
    return EXIT_OK


def cmd_export_transitions(args: argparse.Namespace) -> int:
    try:
        a, b = (int(part) for part in args.layer_pair.split(","))
    except ValueError as exc:
        raise UsageError(f"--layer-pair must be 'i,j', got {args.layer_pair!r}") from exc
    stored = load_model(args.model)
    if stored.kind != "lsgm":
        raise UsageError("export-transitions needs an lsgm model")
    manifest = load_manifest(args.manifest)
    bundle = load_bundle(manifest)
    _check_layer_names(stored.layer_names, bundle.layer_names)

    stats = chain.transition_statistics(stored.model, bundle.per_layer, (a, b))
    write_npy(args.out, stats)
    nonzero = stats[stats > 0]
    report = {
        "command": "export-transitions",
        "config": _config_echo(args),
        "dataset": manifest.name,
        "shape": list(stats.shape),
        "entries_sum": float(stats.sum()),
        "entropy_nats": float(-(nonzero * np.log(nonzero)).sum()),
    }
    _emit(report, args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsgm",
        description=(
            "Fit sequential Gaussian-mixture models over per-layer network "
            "features and score inputs by their joint trace probability."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model from a train_in manifest")
    fit.add_argument("--manifest", required=True, help="training dataset manifest")
    fit.add_argument(
        "--model-kind",
        choices=MODEL_KINDS,
        default="lsgm-dp",
        help="model family to fit (default: lsgm-dp)",
    )
    fit.add_argument("--k", type=int, default=None, help="components per layer (lsgm-gmm)")
    fit.add_argument(
        "--truncation", type=int, default=None, help="maximum components (lsgm-dp)"
    )
    fit.add_argument(
        "--concentration", type=float, default=1.0, help="stick-breaking concentration"
    )
    fit.add_argument(
        "--prune-threshold",
        type=float,
        default=1e-2,
        help="drop components below this expected weight (lsgm-dp)",
    )
    fit.add_argument(
        "--covariance",
        choices=mixture.COVARIANCE_MODES,
        default="full",
        help="per-component covariance structure",
    )
    fit.add_argument(
        "--smoothing",
        type=float,
        default=1.0,
        help="additive count smoothing for transitions",
    )
    fit.add_argument(
        "--assignment",
        choices=("hard", "soft"),
        default="hard",
        help="transition counting mode",
    )
    fit.add_argument("--seed", type=int, default=0, help="base random seed")
    fit.add_argument("--max-iter", type=int, default=500, help="iteration cap per layer")
    fit.add_argument(
        "--tol", type=float, default=1e-6, help="relative objective change to stop"
    )
    fit.add_argument("--out", required=True, help="model file to write")
    fit.add_argument(
        "--report",
        default=None,
        help="diagnostics file (default: <out>.diagnostics.json)",
    )
    fit.set_defaults(func=cmd_fit)

    score = sub.add_parser("score", help="score a dataset with a fitted model")
    score.add_argument("--manifest", required=True)
    score.add_argument("--model", default=None, help="model file from 'fit'")
    score.add_argument(
        "--model-kind",
        choices=("softmax",),
        default=None,
        help="score logits directly instead of using a model file",
    )
    score.add_argument("--out", required=True, help="scores file to write (NPY Nx1)")
    score.add_argument("--report", default=None)
    score.set_defaults(func=cmd_score)

    ev = sub.add_parser("eval", help="detection metrics from two score files")
    ev.add_argument("pos_scores", help="scores of in-distribution (positive) samples")
    ev.add_argument("neg_scores", help="scores of out-of-distribution samples")
    ev.add_argument("--tpr-target", type=float, default=0.95)
    ev.add_argument("--report", default=None)
    ev.set_defaults(func=cmd_eval)

    export = sub.add_parser(
        "export-transitions",
        help="export the empirical transition-frequency matrix of a layer pair",
    )
    export.add_argument("--manifest", required=True)
    export.add_argument("--model", required=True)
    export.add_argument(
        "--layer-pair", required=True, help="adjacent layer indices, e.g. 0,1"
    )
    export.add_argument("--out", required=True, help="matrix file to write (NPY)")
    export.add_argument("--report", default=None)
    export.set_defaults(func=cmd_export_transitions)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotPositiveDefiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        FormatError,
        InvalidArgumentError,
        TooLargeError,
        ZeroRowError,
        LsgmError,
        OSError,
        ValueError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
