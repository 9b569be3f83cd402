"""Experiment protocols, metrics, checkpoints, and report emission.

Three protocols mirror the workbench's evaluation story:

    1. detection       train detectors on an 80/20 split, report confusion metrics
    2. robustness      attack trained detectors on a disjoint corpus, report
                       per-category evasion rates
    3. fusion ablation 1 + 2 for every fusion kind across several seeds

Reports are emitted as schema-stable CSV plus a JSON file carrying the raw
counts, so every table cell can be re-derived.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .attack import AttackBudget, EvasionReport, attack_corpus, evasion_rate
from .detectors import DetectorConfig, DetectorModel, build, make_hard_label_oracle, train
from .errors import ConfigError, DataError, ProtocolError
from .fusion import FUSION_KINDS
from .texe import BENIGN_STRINGS, Corpus, benign_byte_bank
from .views import ViewConfig

# -- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    detector: str
    seed: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float


def metrics_from_counts(detector: str, seed: int, tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    """Confusion-count metrics with malicious as the positive class.

    Ratios with empty denominators are 0, and F1 is 0 when precision and
    recall are both 0.
    """
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(detector, seed, tp, fp, tn, fn, accuracy, precision, recall, f1)


def detection_metrics(oracle, corpus: Corpus, records, detector: str = "", seed: int = 0) -> MetricsReport:
    """Score a hard-label oracle over labelled records."""
    tp = fp = tn = fn = 0
    for r in records:
        truth = 1 if r.label == "malicious" else 0
        pred = oracle(corpus.read(r))
        if truth == 1:
            tp += pred == 1
            fn += pred == 0
        else:
            fp += pred == 1
            tn += pred == 0
    return metrics_from_counts(detector, seed, tp, fp, tn, fn)


def split_corpus(corpus: Corpus, fraction: float = 0.8, seed: int = 0):
    """Deterministic shuffled train/validation split of manifest records."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    idx = np.random.default_rng([seed, 2]).permutation(len(corpus.records))
    cut = int(round(len(idx) * fraction))
    train_records = [corpus.records[i] for i in idx[:cut]]
    val_records = [corpus.records[i] for i in idx[cut:]]
    for name, side in (("train", train_records), ("validation", val_records)):
        labels = {r.label for r in side}
        if labels != {"benign", "malicious"}:
            raise ConfigError(f"{name} split does not contain both classes; "
                              f"adjust the corpus or the fraction")
    return train_records, val_records


# -- experiment 1: detection ------------------------------------------------


@dataclass
class Experiment1Result:
    models: dict
    reports: dict
    train_records: list
    val_records: list


def run_experiment1(corpus: Corpus, configs: dict, split_fraction: float = 0.8,
                    seed: int = 0) -> Experiment1Result:
    """Train each configured detector on one shared split; score the held-out part."""
    train_records, val_records = split_corpus(corpus, split_fraction, seed)
    models = {}
    reports = {}
    for name, cfg in configs.items():
        model = train(build(cfg), corpus, train_records, val_records)
        models[name] = model
        reports[name] = detection_metrics(
            make_hard_label_oracle(model), corpus, val_records, detector=name, seed=cfg.seed
        )
    return Experiment1Result(models, reports, train_records, val_records)


# -- experiment 2: adversarial robustness -----------------------------------


def _resolved_paths(corpus: Corpus):
    return {(corpus.root / r.path).resolve() for r in corpus.records}


def check_disjoint(train_corpus: Corpus, attack_corpus_: Corpus):
    overlap = _resolved_paths(train_corpus) & _resolved_paths(attack_corpus_)
    if overlap:
        sample = sorted(str(p) for p in overlap)[0]
        raise ProtocolError(
            f"attack corpus shares {len(overlap)} file(s) with the training corpus "
            f"(e.g. {sample}); evasion rates would be meaningless"
        )


def run_experiment2(oracles: dict, attack_corpus_: Corpus, budget: AttackBudget,
                    byte_bank: bytes | None = None, string_bank=BENIGN_STRINGS,
                    train_corpus: Corpus | None = None) -> dict:
    """Attack each oracle over the malicious half of a held-out corpus.

    Returns ``{detector: (outcomes, EvasionReport)}``.  When the training
    corpus is supplied, any manifest overlap with the attack corpus is a
    protocol error.
    """
    if train_corpus is not None:
        check_disjoint(train_corpus, attack_corpus_)
    if byte_bank is None:
        byte_bank = benign_byte_bank(attack_corpus_)
    results = {}
    for name, oracle in oracles.items():
        outcomes = attack_corpus(oracle, attack_corpus_, budget,
                                 byte_bank=byte_bank, string_bank=string_bank)
        results[name] = (outcomes, evasion_rate(outcomes))
    return results


# -- experiment 3: fusion ablation ------------------------------------------


@dataclass
class FusionRunRow:
    fusion: str
    metrics: MetricsReport
    evasion: EvasionReport


@dataclass
class Experiment3Result:
    per_seed: dict                  # seed -> list[FusionRunRow] in FUSION_KINDS order
    categories: list


def run_experiment3(corpus: Corpus, attack_corpus_: Corpus, budget: AttackBudget,
                    seeds, base: DetectorConfig | None = None,
                    split_fraction: float = 0.8) -> Experiment3Result:
    """Detection and robustness for every fusion kind, across seeds."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("experiment 3 needs at least one seed")
    check_disjoint(corpus, attack_corpus_)
    if base is None:
        base = DetectorConfig(arch="armd", fusion="attention_highway")
    if base.arch != "armd":
        raise ConfigError(f"the ablation varies armd fusion kinds, got arch {base.arch!r}")
    byte_bank = benign_byte_bank(attack_corpus_)
    categories = sorted({r.category for r in attack_corpus_.malicious()})
    per_seed = {}
    for seed in seeds:
        train_records, val_records = split_corpus(corpus, split_fraction, seed)
        rows = []
        for kind in FUSION_KINDS:
            cfg = replace(base, fusion=kind, seed=seed)
            model = train(build(cfg), corpus, train_records, val_records)
            oracle = make_hard_label_oracle(model)
            metrics = detection_metrics(oracle, corpus, val_records,
                                        detector=f"armd[{kind}]", seed=seed)
            outcomes = attack_corpus(oracle, attack_corpus_, replace(budget, seed=seed),
                                     byte_bank=byte_bank)
            rows.append(FusionRunRow(kind, metrics, evasion_rate(outcomes)))
        per_seed[seed] = rows
    return Experiment3Result(per_seed, categories)


def mean_ablation(result: Experiment3Result):
    """Seed-averaged ablation cells: {fusion: {column: value-or-None}}."""
    out = {}
    for i, kind in enumerate(FUSION_KINDS):
        rows = [result.per_seed[s][i] for s in result.per_seed]
        cells = {}
        for m in ("accuracy", "precision", "recall", "f1"):
            cells[m] = float(np.mean([getattr(r.metrics, m) for r in rows]))
        for c in result.categories:
            vals = [r.evasion.per_category.get(c) for r in rows]
            vals = [v for v in vals if v is not None]
            cells[f"evasion_{c}"] = float(np.mean(vals)) if vals else None
        totals = [r.evasion.total for r in rows if r.evasion.total is not None]
        cells["evasion_total"] = float(np.mean(totals)) if totals else None
        out[kind] = cells
    return out


# -- report emission --------------------------------------------------------


def _cell(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def write_metrics_csv(reports, path):
    lines = ["detector,seed,accuracy,precision,recall,f1,tp,fp,tn,fn"]
    for r in reports:
        lines.append(
            f"{r.detector},{r.seed},{_cell(r.accuracy)},{_cell(r.precision)},"
            f"{_cell(r.recall)},{_cell(r.f1)},{r.tp},{r.fp},{r.tn},{r.fn}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_evasion_table_csv(reports: dict, categories, path):
    """One column per detector, one row per category plus a total row."""
    names = list(reports)
    lines = ["category," + ",".join(names)]
    for c in categories:
        lines.append(c + "," + ",".join(_cell(reports[n].per_category.get(c)) for n in names))
    lines.append("total," + ",".join(_cell(reports[n].total) for n in names))
    Path(path).write_text("\n".join(lines) + "\n")


def _ablation_header(categories) -> str:
    cols = ["fusion", "accuracy", "precision", "recall", "f1"]
    cols += [f"evasion_{c}" for c in categories] + ["evasion_total"]
    return ",".join(cols)


def write_ablation_csv(rows, categories, path):
    lines = [_ablation_header(categories)]
    for row in rows:
        cells = [row.fusion, _cell(row.metrics.accuracy), _cell(row.metrics.precision),
                 _cell(row.metrics.recall), _cell(row.metrics.f1)]
        cells += [_cell(row.evasion.per_category.get(c)) for c in categories]
        cells.append(_cell(row.evasion.total))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_mean_ablation_csv(result: Experiment3Result, path):
    cells_by_kind = mean_ablation(result)
    lines = [_ablation_header(result.categories)]
    for kind in FUSION_KINDS:
        cells = cells_by_kind[kind]
        row = [kind] + [_cell(cells[m]) for m in ("accuracy", "precision", "recall", "f1")]
        row += [_cell(cells[f"evasion_{c}"]) for c in result.categories]
        row.append(_cell(cells["evasion_total"]))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def manifest_hash(corpus: Corpus) -> str:
    return hashlib.sha256((corpus.root / "manifest.csv").read_bytes()).hexdigest()


def ablation_json(result: Experiment3Result, corpus: Corpus, attack_corpus_: Corpus,
                  budget: AttackBudget) -> dict:
    """Raw counts behind every ablation cell, for re-derivation."""
    per_seed = {}
    for seed, rows in result.per_seed.items():
        per_seed[str(seed)] = {
            row.fusion: {
                "metrics": asdict(row.metrics),
                "evaded": row.evasion.evaded,
                "detected": row.evasion.detected,
            }
            for row in rows
        }
    return {
        "budget": asdict(budget),
        "categories": result.categories,
        "corpus_manifest_sha256": manifest_hash(corpus),
        "attack_corpus_manifest_sha256": manifest_hash(attack_corpus_),
        "per_seed": per_seed,
    }


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"ARMDCKPT"
CKPT_VERSION = 1


class CheckpointError(DataError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCrcError(CheckpointError):
    pass


def _config_to_json(cfg: DetectorConfig) -> bytes:
    return json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":")).encode()


def _config_from_json(blob: bytes) -> DetectorConfig:
    try:
        d = json.loads(blob)
        d["views"] = ViewConfig(**d.pop("views"))
        return DetectorConfig(**d)
    except (ValueError, TypeError, KeyError) as e:
        raise CheckpointError(f"unusable embedded config: {e}") from e


def save_checkpoint(model: DetectorModel, path):
    """Serialize config plus parameters with a trailing CRC32."""
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<I", CKPT_VERSION)
    blob = _config_to_json(model.config)
    buf += struct.pack("<I", len(blob)) + blob
    buf += struct.pack("<I", len(model.params))
    for name, p in model.params.items():
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", p.data.ndim)
        for dim in p.data.shape:
            buf += struct.pack("<I", dim)
        buf += p.data.astype("<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> DetectorModel:
    """Load and verify a checkpoint; magic, version, and CRC are all enforced."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < 16:
        raise CheckpointError(f"checkpoint of {len(data)} bytes is too short")
    if data[:8] != CKPT_MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {data[:8]!r}")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"unknown checkpoint version {version}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise CheckpointCrcError(
            f"checkpoint CRC mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
        )
    off = 12
    try:
        (cfg_len,) = struct.unpack_from("<I", data, off)
        off += 4
        cfg = _config_from_json(data[off : off + cfg_len])
        off += cfg_len
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        model = build(cfg)
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            if name not in model.params:
                raise CheckpointError(f"checkpoint tensor {name!r} unknown to arch {cfg.arch!r}")
            if model.params[name].data.shape != tuple(dims):
                raise CheckpointError(
                    f"tensor {name!r} has shape {tuple(dims)}, expected "
                    f"{model.params[name].data.shape}"
                )
            model.params[name].data[...] = arr
            seen.add(name)
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint body: {e}") from e
    missing = set(model.params) - seen
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
