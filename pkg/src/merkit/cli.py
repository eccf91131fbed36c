"""Command-line pipelines: train victims, run attacks, score risk, emit reports.

Every artifact-producing command prints the canonical digest of its
effective configuration and writes exactly one manifest next to its
outputs. Exit codes: 0 ok, 2 bad config or input, 3 training failure,
4 numerical failure, 5 fixture integrity failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import configio, dataio, extraction, figures, inspector, nn, ntk, risk
from .errors import (
    CapacityError,
    DataError,
    DimensionError,
    FixtureError,
    ParameterError,
    ParseError,
    SingularMatrixError,
    UndefinedCorrelationError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_NUMERICAL = 4
EXIT_FIXTURE = 5


class _TrainingFailure(Exception):
    """Raised when an optimizer run produces a non-finite loss."""


# ---------------------------------------------------------------- config


def _dataset_from_config(path) -> dataio.Dataset:
    """Build a dataset from a [data] section: synthetic generator or CSV."""
    cfg = configio.read_config(path)
    if "data" not in cfg:
        raise ParseError(f"{path}: expected a [data] section")
    sec = cfg["data"]
    kind = configio.get_str(sec, "kind", section_name="data")
    if kind == "blobs":
        return dataio.make_blobs(
            n=configio.get_int(sec, "n", section_name="data"),
            d=configio.get_int(sec, "d", section_name="data"),
            k=configio.get_int(sec, "k", 2, "data"),
            spread=configio.get_float(sec, "spread", 0.5, "data"),
            seed=configio.get_int(sec, "seed", 0, "data"),
        )
    if kind == "moons":
        return dataio.make_moons(
            n=configio.get_int(sec, "n", section_name="data"),
            noise=configio.get_float(sec, "noise", 0.1, "data"),
            seed=configio.get_int(sec, "seed", 0, "data"),
        )
    if kind == "rings":
        return dataio.make_rings(
            n=configio.get_int(sec, "n", section_name="data"),
            k=configio.get_int(sec, "k", 2, "data"),
            noise=configio.get_float(sec, "noise", 0.05, "data"),
            seed=configio.get_int(sec, "seed", 0, "data"),
        )
    if kind == "csv":
        csv_path = Path(configio.get_str(sec, "path", section_name="data"))
        if not csv_path.is_absolute():
            csv_path = Path(path).parent / csv_path
        return dataio.load_csv(csv_path, configio.get_str(sec, "label_column", "label", "data"))
    raise ParseError(f"{path}: unknown data kind {kind!r}")


def _model_spec_from_config(path) -> nn.ModelSpec:
    cfg = configio.read_config(path)
    if "model" not in cfg:
        raise ParseError(f"{path}: expected a [model] section")
    sec = cfg["model"]
    return nn.ModelSpec(
        input_dim=configio.get_int(sec, "input_dim", section_name="model"),
        layer_widths=tuple(configio.get_int_list(sec, "layer_widths", [], "model")),
        num_classes=configio.get_int(sec, "num_classes", section_name="model"),
        activation=configio.get_str(sec, "activation", "relu", "model"),
        init_seed=configio.get_int(sec, "init_seed", 0, "model"),
        init_scale=configio.get_float(sec, "init_scale", 1.0, "model"),
    )


def _train_config_from_sections(cfg: dict, path) -> nn.TrainConfig:
    if "train" not in cfg:
        raise ParseError(f"{path}: expected a [train] section")
    sec = cfg["train"]
    adversarial = None
    if "adversarial" in cfg:
        adv = cfg["adversarial"]
        adversarial = nn.PgdConfig(
            epsilon=configio.get_float(adv, "epsilon", section_name="adversarial"),
            step_size=configio.get_float(adv, "step_size", section_name="adversarial"),
            steps=configio.get_int(adv, "steps", section_name="adversarial"),
        )
    return nn.TrainConfig(
        optimizer=configio.get_str(sec, "optimizer", "sgd", "train"),
        learning_rate=configio.get_float(sec, "learning_rate", 0.01, "train"),
        epochs=configio.get_int(sec, "epochs", 200, "train"),
        batch_size=configio.get_int(sec, "batch_size", 32, "train"),
        momentum=configio.get_float(sec, "momentum", 0.0, "train"),
        weight_decay=configio.get_float(sec, "weight_decay", 0.0, "train"),
        loss=configio.get_str(sec, "loss", "cross_entropy", "train"),
        seed=configio.get_int(sec, "seed", 0, "train"),
        adversarial=adversarial,
    )


def _train_config_from_config(path) -> nn.TrainConfig:
    return _train_config_from_sections(configio.read_config(path), path)


def _mrc_config_from_config(path) -> risk.MrcConfig:
    cfg = configio.read_config(path)
    if "mrc" not in cfg:
        raise ParseError(f"{path}: expected an [mrc] section")
    sec = cfg["mrc"]
    return risk.MrcConfig(
        L=configio.get_int(sec, "l", 400, "mrc"),
        eta=configio.get_float(sec, "eta", 0.5, "mrc"),
        q=configio.get_float(sec, "q", 0.5, "mrc"),
        output_space=configio.get_str(sec, "output_space", "probabilities", "mrc"),
        eval_point=configio.get_str(sec, "eval_point", "trained", "mrc"),
    )


def _attack_config_from_config(path) -> extraction.AttackConfig:
    cfg = configio.read_config(path)
    if "attack" not in cfg:
        raise ParseError(f"{path}: expected an [attack] section")
    sec = cfg["attack"]
    return extraction.AttackConfig(
        strategy=configio.get_str(sec, "strategy", section_name="attack"),
        budget=configio.get_int(sec, "budget", section_name="attack"),
        surrogate_train=_train_config_from_sections(cfg, path),
        rounds=configio.get_int(sec, "rounds", 1, "attack"),
        oracle_mode=configio.get_str(sec, "oracle_mode", "probabilities", "attack"),
        jbda_step=configio.get_float(sec, "jbda_step", 0.1, "attack"),
        shared_init=configio.get_bool(sec, "shared_init", True, "attack"),
    )


def _load_model(path) -> nn.NeuralModel:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"model file not found: {path}")
    try:
        return nn.load_model(path)
    except KeyError as exc:
        raise ParseError(f"{path}: not a model file (missing field {exc})") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: not a model file ({exc})") from exc


def _config_dict(obj) -> dict:
    """Dataclass (tree) to a JSON-safe dict for digesting."""
    doc = asdict(obj)

    def clean(value):
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        if isinstance(value, (np.integer, np.floating)):
            return value.item()
        return value

    return clean(doc)


def _write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def _print_digest(digest: str) -> None:
    print(f"config digest: {digest}")


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ParseError(f"--seeds expects comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise ParseError("--seeds is empty")
    return seeds


# ---------------------------------------------------------------- commands


def _cmd_train(args) -> int:
    spec = _model_spec_from_config(args.spec)
    data = _dataset_from_config(args.data)
    train_cfg = _train_config_from_config(args.train_cfg)
    effective = {
        "command": "train",
        "spec": _config_dict(spec),
        "train": _config_dict(train_cfg),
        "data": configio.read_config(args.data),
    }
    digest = configio.config_digest(effective)
    _print_digest(digest)
    model = nn.build_model(spec)
    report = nn.train(model, data, train_cfg)
    if not math.isfinite(report.loss_curve[-1]):
        raise _TrainingFailure(
            f"training diverged: final loss {report.loss_curve[-1]} is not finite"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_model(model, out)
    configio.write_manifest(out, "train", digest, [spec.init_seed, train_cfg.seed],
                            [args.spec, args.data, args.train_cfg], [out])
    print(f"trained model written to {out} (train accuracy {report.final_accuracy:.4f})")
    return EXIT_OK


def _cmd_attack(args) -> int:
    victim = _load_model(args.victim)
    pool = _dataset_from_config(args.pool)
    eval_set = _dataset_from_config(args.test)
    attack_cfg = _attack_config_from_config(args.attack_cfg)
    effective = {"command": "attack", "attack": _config_dict(attack_cfg),
                 "victim": nn.model_digest(victim)}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    result = extraction.run_attack(victim, pool, attack_cfg, eval_set)
    out = Path(args.out)
    surrogate_path = out.with_name(out.stem + "_surrogate.json")
    curve_path = out.with_name(out.stem + "_curve.png")
    _write_json(out, {
        "strategy": attack_cfg.strategy,
        "budget": attack_cfg.budget,
        "oracle_mode": attack_cfg.oracle_mode,
        "fidelity": result.fidelity,
        "attack_accuracy": result.attack_accuracy,
        "queries_used": result.queries_used,
        "per_round": [[int(q), float(f)] for q, f in result.per_round],
        "config_digest": digest,
    })
    nn.save_model(result.surrogate, surrogate_path)
    figures.plot_attack_curve(result.per_round, curve_path)
    configio.write_manifest(out, "attack", digest, [attack_cfg.surrogate_train.seed],
                            [args.victim, args.pool, args.test, args.attack_cfg],
                            [out, surrogate_path, curve_path])
    print(f"fidelity {result.fidelity:.4f} with {result.queries_used} queries -> {out}, "
          f"surrogate -> {surrogate_path}")
    return EXIT_OK


def _cmd_assess(args) -> int:
    victim = _load_model(args.victim)
    pool = _dataset_from_config(args.pool)
    test_set = _dataset_from_config(args.test)
    mrc_cfg = _mrc_config_from_config(args.mrc_cfg) if args.mrc_cfg else risk.MrcConfig()
    effective = {"command": "assess", "mrc": _config_dict(mrc_cfg),
                 "victim": nn.model_digest(victim)}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    vector = risk.RiskVector(
        vma=risk.vma(victim, test_set),
        mrc=risk.mrc(victim, pool, mrc_cfg),
        model_id=nn.model_digest(victim)[:12],
        dataset_id=Path(args.pool).stem,
    )
    out = _write_json(args.out, {**asdict(vector), "mrc_config": _config_dict(mrc_cfg),
                                 "config_digest": digest})
    configio.write_manifest(out, "assess", digest, [],
                            [args.victim, args.pool, args.test], [out])
    print(f"vma {vector.vma:.4f}, mrc {vector.mrc:.6g} -> {out}")
    return EXIT_OK


def _cmd_bound(args) -> int:
    victim = _load_model(args.victim)
    surrogate = _load_model(args.surrogate)
    samples = _dataset_from_config(args.samples)
    cfg = configio.read_config(args.bound_cfg)
    if "bound" not in cfg:
        raise ParseError(f"{args.bound_cfg}: expected a [bound] section")
    sec = cfg["bound"]
    gammas = configio.get_float_list(sec, "gammas", section_name="bound")
    delta = configio.get_float(sec, "delta", 0.05, "bound")
    clip_q = configio.get_float(sec, "clip_q", 1e-6, "bound")
    effective = {"command": "bound", "gammas": gammas, "delta": delta, "clip_q": clip_q,
                 "victim": nn.model_digest(victim), "surrogate": nn.model_digest(surrogate)}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    ntkm = ntk.assemble(victim, samples.features, at="init", clip_q=clip_q)
    reports, best = risk.bound_grid(victim, surrogate, samples.features, gammas,
                                    delta, ntkm)
    out = _write_json(args.out, {
        "reports": [asdict(r) for r in reports],
        "best_index": best,
        "best_gamma": reports[best].gamma,
        "best_total": reports[best].total,
        "empirical_gap": reports[0].empirical_gap,
        "config_digest": digest,
    })
    curve_path = out.with_name(out.stem + "_curve.png")
    figures.plot_bound_curve(reports, curve_path)
    configio.write_manifest(out, "bound", digest, [],
                            [args.victim, args.surrogate, args.samples, args.bound_cfg],
                            [out, curve_path])
    print(f"best bound {reports[best].total:.4f} at gamma {reports[best].gamma:.4g} -> {out}")
    return EXIT_OK


def _records_for_fixtures(args) -> list[inspector.RiskRecord]:
    rows = dataio.load_fixtures(args.fixtures_dir)
    return inspector.records_from_fixtures(rows, mrc_l=getattr(args, "mrc_l", None))


def _cmd_pairs(args) -> int:
    records = _records_for_fixtures(args)
    split_result = inspector.build_pairs(records, scope=args.scope,
                                         test_fraction=args.test_fraction, seed=args.seed)
    effective = {"command": "pairs", "scope": args.scope, "seed": args.seed,
                 "test_fraction": args.test_fraction}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    in_test = {id(ex) for ex in split_result.test}
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "dataset", "model_a", "model_b", "intra_group", "split",
            "vma_a", "mrc_a", "vma_b", "mrc_b", "vma_diff", "mrc_diff", "label",
        ])
        for ex in split_result.all_examples:
            writer.writerow([
                ex.dataset_id, ex.record_a.model_id, ex.record_b.model_id,
                int(ex.intra_group), "test" if id(ex) in in_test else "train",
                *[repr(float(v)) for v in ex.features], ex.label,
            ])
    configio.write_manifest(out, "pairs", digest, [args.seed], [args.fixtures_dir or ""],
                            [out])
    print(f"{len(split_result.all_examples)} pairs "
          f"({len(split_result.train)} train / {len(split_result.test)} test) -> {out}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    records = _records_for_fixtures(args)
    seeds = _parse_seeds(args.seeds)
    metrics = tuple(part.strip() for part in args.metrics.split(",") if part.strip())
    effective = {"command": "inspect", "scope": args.scope, "metrics": list(metrics),
                 "fa": args.fa, "seeds": seeds}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    values = []
    for seed in seeds:
        split_result = inspector.build_pairs(records, scope=args.scope, seed=seed)
        cfg = inspector.ComparatorConfig(metrics=metrics, fa=args.fa, seed=seed)
        model = inspector.train_comparator(split_result.train, cfg)
        values.append(inspector.cacc(model, split_result.test))
    out = _write_json(args.out, {
        "scope": args.scope,
        "metrics": list(metrics),
        "fa": args.fa,
        "seeds": seeds,
        "cacc_values": values,
        "cacc_mean": float(np.mean(values)),
        "cacc_std": float(np.std(values)),
        "config_digest": digest,
    })
    configio.write_manifest(out, "inspect", digest, seeds, [args.fixtures_dir or ""], [out])
    print(f"cacc mean {float(np.mean(values)):.4f} over {len(seeds)} seeds -> {out}")
    return EXIT_OK


def _cmd_reproduce_table1(args) -> int:
    records = _records_for_fixtures(args)
    seeds = _parse_seeds(args.seeds)
    effective = {"command": "reproduce-table1", "seeds": seeds}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    result = inspector.reproduce_table1(records, seeds=seeds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope"] + list(inspector.TABLE1_COLUMNS))
        for row in inspector.TABLE1_ROWS:
            cells = [result.cells[(row, column)] for column in inspector.TABLE1_COLUMNS]
            writer.writerow([row] + [f"{c['mean']:.4f}±{c['std']:.4f}" for c in cells])
    json_path = out.with_suffix(".json")
    _write_json(json_path, {
        "seeds": seeds,
        "cells": {f"{row}/{column}": result.cells[(row, column)]
                  for row in inspector.TABLE1_ROWS for column in inspector.TABLE1_COLUMNS},
        "config_digest": digest,
    })
    figure_path = out.with_suffix(".png")
    figures.plot_table1(result, figure_path)
    configio.write_manifest(out, "reproduce-table1", digest, seeds,
                            [args.fixtures_dir or ""], [out, json_path, figure_path])
    print(f"comparison-accuracy table over seeds {seeds} -> {out}")
    return EXIT_OK


def _cmd_stats(args) -> int:
    records = _records_for_fixtures(args)
    effective = {"command": "stats", "mrc_l": args.mrc_l}
    digest = configio.config_digest(effective)
    _print_digest(digest)
    rows = inspector.metric_report(records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = ["dataset", "group", "count", "pcc_mrc", "krc_mrc", "pcc_vma", "krc_vma"]
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    outputs = [out]
    for metric in ("vma", "mrc"):
        fig_path = out.with_name(out.stem + f"_{metric}.png")
        figures.scatter_metric_fidelity(records, metric, fig_path)
        outputs.append(fig_path)
    configio.write_manifest(out, "stats", digest, [], [args.fixtures_dir or ""], outputs)
    print(f"{len(rows)} correlation rows -> {out}")
    return EXIT_OK


def _cmd_fixtures_check(args) -> int:
    rows = dataio.load_fixtures(args.fixtures_dir)
    datasets = sorted({row.dataset for row in rows})
    print(f"{len(rows)} rows across {len(datasets)} datasets: {', '.join(datasets)}")
    print("fixtures ok")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_fixtures_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fixtures-dir", default=None,
                        help="directory of fixture CSVs (default: bundled tables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="merkit",
        description="Extraction-risk toolkit: train victims, attack them, score risk.",
    )
    parser.add_argument("--version", action="version", version=configio.TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from config files")
    p.add_argument("--spec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train-cfg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="run an extraction attack against a model file")
    p.add_argument("--victim", required=True)
    p.add_argument("--pool", required=True, help="query pool data config")
    p.add_argument("--test", required=True, help="fidelity evaluation data config")
    p.add_argument("--attack-cfg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("assess", help="compute the (vma, mrc) risk vector")
    p.add_argument("--victim", required=True)
    p.add_argument("--pool", required=True, help="selection pool data config")
    p.add_argument("--test", required=True, help="accuracy evaluation data config")
    p.add_argument("--mrc-cfg", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_assess)

    p = sub.add_parser("bound", help="evaluate the fidelity-gap bound on a gamma grid")
    p.add_argument("--victim", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--samples", required=True, help="bound sample data config")
    p.add_argument("--bound-cfg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("pairs", help="emit the ordered-pair table from fixtures")
    _add_fixtures_arg(p)
    p.add_argument("--scope", default="all", choices=["all", "intra", "inter"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--mrc-l", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pairs)

    p = sub.add_parser("inspect", help="train a pairwise comparator and report CAcc")
    _add_fixtures_arg(p)
    p.add_argument("--scope", default="all", choices=["all", "intra", "inter"])
    p.add_argument("--metrics", default="vma,mrc")
    p.add_argument("--fa", dest="fa", action="store_true", default=True)
    p.add_argument("--no-fa", dest="fa", action="store_false")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--mrc-l", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("reproduce-table1",
                       help="comparison-accuracy grid over scopes and feature sets")
    _add_fixtures_arg(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--mrc-l", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reproduce_table1)

    p = sub.add_parser("stats", help="per-group metric/fidelity correlations")
    _add_fixtures_arg(p)
    p.add_argument("--mrc-l", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("fixtures-check", help="validate the bundled result tables")
    _add_fixtures_arg(p)
    p.set_defaults(func=_cmd_fixtures_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FixtureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except (SingularMatrixError, CapacityError, UndefinedCorrelationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _TrainingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ParseError, ParameterError, DataError, DimensionError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
