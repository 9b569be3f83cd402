"""Command-line front end.

Subcommands: gen-corpus, train, eval, attack, ablate.  Every option can also
come from a JSON config file via ``--config``; explicit flags beat the file,
the file beats built-in defaults.  Exit codes: 0 success, 2 configuration
error, 3 data/parse error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .attack import AttackBudget, evasion_rate, write_outcomes_csv
from .attack import attack_corpus as run_attack
from .detectors import DetectorConfig, build, make_hard_label_oracle, train
from .errors import ConfigError, DataError, ProtocolError
from .experiments import (ablation_json, detection_metrics, load_checkpoint,
                          run_experiment3, save_checkpoint, split_corpus,
                          write_ablation_csv, write_mean_ablation_csv,
                          write_metrics_csv)
from .texe import DEFAULT_CATEGORIES, benign_byte_bank, gen_corpus, load_manifest

_REQUIRED = object()

_SPECS = {
    "gen-corpus": {
        "out": _REQUIRED,
        "n_benign": 100,
        "n_malicious": 100,
        "categories": ",".join(DEFAULT_CATEGORIES),
        "seed": 0,
        "size_min": 1536,
        "size_max": 3072,
    },
    "train": {
        "corpus": _REQUIRED,
        "arch": _REQUIRED,
        "fusion": "attention-highway",
        "seed": 0,
        "out": _REQUIRED,
        "epochs": 10,
        "lr": 1e-3,
        "batch": 32,
        "split": 0.8,
    },
    "eval": {
        "ckpt": _REQUIRED,
        "corpus": _REQUIRED,
        "report": _REQUIRED,
    },
    "attack": {
        "ckpt": _REQUIRED,
        "corpus": _REQUIRED,
        "mode": "append-random",
        "budget_bytes": 512,
        "max_queries": 200,
        "seed": 0,
        "report": _REQUIRED,
    },
    "ablate": {
        "corpus": _REQUIRED,
        "attack_corpus": _REQUIRED,
        "seeds": "0,1,2",
        "report": _REQUIRED,
        # config-file-only training/attack knobs
        "epochs": 10,
        "batch": 32,
        "lr": 1e-3,
        "split": 0.8,
        "mode": "hillclimb",
        "budget_bytes": 512,
        "max_queries": 200,
    },
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="armd",
                                description="two-view malware detection workbench")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a labelled synthetic corpus")
    g.add_argument("--out")
    g.add_argument("--n-benign", type=int)
    g.add_argument("--n-malicious", type=int)
    g.add_argument("--categories")
    g.add_argument("--seed", type=int)
    g.add_argument("--size-min", type=int)
    g.add_argument("--size-max", type=int)

    t = sub.add_parser("train", help="train a detector and write a checkpoint")
    t.add_argument("--corpus")
    t.add_argument("--arch", choices=["malconv", "nonneg", "convnet", "armd"])
    t.add_argument("--fusion", choices=["concat", "attention", "highway",
                                        "highway-attention", "attention-highway"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--split", type=float)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus")
    e.add_argument("--ckpt")
    e.add_argument("--corpus")
    e.add_argument("--report")

    a = sub.add_parser("attack", help="run a black-box evasion attack")
    a.add_argument("--ckpt")
    a.add_argument("--corpus")
    a.add_argument("--mode", choices=["append-random", "append-benign",
                                      "hillclimb", "dual-view"])
    a.add_argument("--budget-bytes", type=int)
    a.add_argument("--max-queries", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--report")

    b = sub.add_parser("ablate", help="fusion ablation across seeds")
    b.add_argument("--corpus")
    b.add_argument("--attack-corpus")
    b.add_argument("--seeds")
    b.add_argument("--report")

    for s in (g, t, e, a, b):
        s.add_argument("--config", help="JSON file of option defaults")
    return p


def _merge_options(command: str, args: argparse.Namespace) -> dict:
    spec = _SPECS[command]
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"config file {args.config} is not valid JSON: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        unknown = set(file_cfg) - set(spec)
        if unknown:
            raise ConfigError(
                f"config file {args.config} has unknown keys for {command}: "
                f"{', '.join(sorted(unknown))}"
            )
    merged = {}
    for key, default in spec.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, default)
        if value is _REQUIRED:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
        merged[key] = value
    return merged


def _dash(v: str) -> str:
    return v.replace("-", "_")


def _cmd_gen_corpus(o: dict) -> int:
    categories = tuple(c.strip() for c in str(o["categories"]).split(",") if c.strip())
    corpus = gen_corpus(o["out"], int(o["seed"]), int(o["n_benign"]), int(o["n_malicious"]),
                        categories=categories,
                        size_range=(int(o["size_min"]), int(o["size_max"])))
    print(f"wrote {len(corpus.records)} files and manifest.csv to {corpus.root}")
    return 0


def _detector_config(o: dict) -> DetectorConfig:
    return DetectorConfig(
        arch=o["arch"],
        fusion=_dash(str(o["fusion"])) if o["arch"] == "armd" else None,
        seed=int(o["seed"]),
        epochs=int(o["epochs"]),
        lr=float(o["lr"]),
        batch_size=int(o["batch"]),
    )


def _cmd_train(o: dict) -> int:
    corpus = load_manifest(o["corpus"])
    cfg = _detector_config(o)
    train_records, val_records = split_corpus(corpus, float(o["split"]), cfg.seed)
    model = train(build(cfg), corpus, train_records, val_records)
    save_checkpoint(model, o["out"])
    best = model.history["best_epoch"]
    f1 = max(model.history["val_f1"]) if model.history["val_f1"] else 0.0
    print(f"trained {cfg.arch} for {len(model.history['val_f1'])} epochs "
          f"(best epoch {best + 1}, val F1 {f1:.4f}); checkpoint: {o['out']}")
    return 0


def _cmd_eval(o: dict) -> int:
    model = load_checkpoint(o["ckpt"])
    corpus = load_manifest(o["corpus"])
    report = detection_metrics(make_hard_label_oracle(model), corpus, corpus.records,
                               detector=model.config.arch, seed=model.config.seed)
    out = Path(o["report"])
    if out.suffix == ".json":
        out.write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
    elif out.suffix == ".csv":
        write_metrics_csv([report], out)
    else:
        raise ConfigError(f"report path must end in .csv or .json, got {out.name}")
    print(f"{model.config.arch}: accuracy {report.accuracy:.4f}  precision "
          f"{report.precision:.4f}  recall {report.recall:.4f}  F1 {report.f1:.4f}")
    return 0


def _cmd_attack(o: dict) -> int:
    model = load_checkpoint(o["ckpt"])
    corpus = load_manifest(o["corpus"])
    budget = AttackBudget(max_payload_bytes=int(o["budget_bytes"]),
                          max_queries=int(o["max_queries"]),
                          mode=_dash(str(o["mode"])), seed=int(o["seed"]))
    outcomes = run_attack(make_hard_label_oracle(model), corpus, budget,
                          byte_bank=benign_byte_bank(corpus))
    write_outcomes_csv(outcomes, o["report"])
    report = evasion_rate(outcomes)
    total = "undefined" if report.total is None else f"{report.total:.4f}"
    print(f"attacked {len(outcomes)} samples with {budget.mode}; "
          f"total evasion rate: {total}; outcomes: {o['report']}")
    return 0


def _cmd_ablate(o: dict) -> int:
    corpus = load_manifest(o["corpus"])
    atk = load_manifest(o["attack_corpus"])
    try:
        seeds = [int(s) for s in str(o["seeds"]).split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds must be comma-separated integers: {e}") from e
    budget = AttackBudget(max_payload_bytes=int(o["budget_bytes"]),
                          max_queries=int(o["max_queries"]),
                          mode=_dash(str(o["mode"])))
    base = DetectorConfig(arch="armd", fusion="attention_highway",
                          epochs=int(o["epochs"]), batch_size=int(o["batch"]),
                          lr=float(o["lr"]))
    result = run_experiment3(corpus, atk, budget, seeds, base=base,
                             split_fraction=float(o["split"]))
    report_dir = Path(o["report"])
    report_dir.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        write_ablation_csv(result.per_seed[seed], result.categories,
                           report_dir / f"ablation_seed{seed}.csv")
    write_mean_ablation_csv(result, report_dir / "ablation_mean.csv")
    (report_dir / "ablation_full.json").write_text(
        json.dumps(ablation_json(result, corpus, atk, budget), indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {len(seeds)} per-seed tables, ablation_mean.csv and "
          f"ablation_full.json to {report_dir}")
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "attack": _cmd_attack,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        options = _merge_options(args.command, args)
        return _COMMANDS[args.command](options)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ProtocolError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
