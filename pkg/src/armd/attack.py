"""Black-box hard-label evasion against TEXE detectors.

The attacker sees nothing but a bytes -> {0,1} verdict callback.  Every mode
only ever *adds* content — overlay bytes after the sections, or one extra
data section — and the harness re-parses each mutant to assert that the
original sections survive byte-for-byte (the stand-in for "functionality is
preserved").  Attacks stop at the first successful flip.

Per-sample randomness comes from a sub-seed mixed from the master seed and
the sample index, so outcomes are reproducible and independent of how many
samples run or in what order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError, UsageError
from .texe import (BENIGN_STRINGS, Corpus, TexeFile, append_overlay,
                   inject_data_section, parse_texe, write_texe)

MODES = ("append_random", "append_benign", "hillclimb", "dual_view")

_MUTATION_FRACTION = 0.10
_RESTART_AFTER = 20


@dataclass(frozen=True)
class AttackBudget:
    max_payload_bytes: int = 512
    max_queries: int = 200
    mode: str = "append_random"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}; known: {', '.join(MODES)}")
        if self.max_payload_bytes < 1:
            raise ConfigError(f"max_payload_bytes must be positive, got {self.max_payload_bytes}")
        if self.max_queries < 1:
            raise ConfigError(f"max_queries must be positive, got {self.max_queries}")


@dataclass
class AttackOutcome:
    path: str
    category: str
    detected_before: bool
    evaded: bool
    queries_used: int
    payload_size: int


def _check_functionality(original: TexeFile, mutated: bytes):
    """The mutant must parse and keep every original section byte-identical."""
    g = parse_texe(mutated)
    kept = [(s.kind, s.payload) for s in g.sections[: len(original.sections)]]
    want = [(s.kind, s.payload) for s in original.sections]
    if kept != want:
        raise ProtocolError("attack altered a pre-existing section")


def _random_payload(rng, budget: AttackBudget) -> bytes:
    n = int(rng.integers(1, budget.max_payload_bytes + 1))
    return rng.integers(0, 256, n, dtype=np.uint8).tobytes()


def _bank_slice(rng, bank: bytes, length: int) -> bytes:
    length = min(length, len(bank))
    start = int(rng.integers(0, len(bank) - length + 1))
    return bank[start : start + length]


def _full_payload(rng, budget: AttackBudget, byte_bank) -> bytes:
    """Hill-climb starting point: a benign slice when a bank is available.

    Benign content is the natural seed material for append attacks; without a
    bank the climber falls back to uniform random bytes.
    """
    if byte_bank:
        return _bank_slice(rng, byte_bank, budget.max_payload_bytes)
    return rng.integers(0, 256, budget.max_payload_bytes, dtype=np.uint8).tobytes()


def _mutate(rng, payload: bytes) -> bytes:
    out = bytearray(payload)
    n = max(1, round(len(out) * _MUTATION_FRACTION))
    pos = rng.choice(len(out), size=n, replace=False)
    vals = rng.integers(0, 256, n, dtype=np.uint8)
    for p, v in zip(pos, vals):
        out[p] = v
    return bytes(out)


def attack_sample(oracle, f: TexeFile, budget: AttackBudget, sample_index: int = 0,
                  byte_bank: bytes | None = None, string_bank=BENIGN_STRINGS,
                  path: str = "", category: str = "") -> AttackOutcome:
    """Run one budgeted attack against a single file.

    Samples the oracle never flagged are skipped (nothing to evade).  The
    baseline classification is not charged against the query budget.
    """
    if budget.mode == "append_benign" and not byte_bank:
        raise ConfigError("append_benign needs a non-empty benign byte bank")
    if budget.mode == "dual_view" and not string_bank:
        raise ConfigError("dual_view needs a non-empty benign string bank")
    base = write_texe(f)
    if oracle(base) != 1:
        return AttackOutcome(path, category, False, False, 0, 0)
    rng = np.random.default_rng([budget.seed, sample_index])
    current: bytes | None = None  # hill-climb state
    streak = 0
    for q in range(1, budget.max_queries + 1):
        injected = 0
        if budget.mode == "append_random":
            payload = _random_payload(rng, budget)
            cand = append_overlay(f, payload)
        elif budget.mode == "append_benign":
            payload = _bank_slice(rng, byte_bank, int(rng.integers(1, budget.max_payload_bytes + 1)))
            cand = append_overlay(f, payload)
        elif budget.mode == "hillclimb":
            fresh = current is None
            payload = _full_payload(rng, budget, byte_bank) if fresh else _mutate(rng, current)
            cand = append_overlay(f, payload)
        else:  # dual_view: overlay append plus a benign-string data section
            payload = _random_payload(rng, budget)
            k = int(rng.integers(1, 6))
            strings = [string_bank[int(rng.integers(0, len(string_bank)))] for _ in range(k)]
            cand = append_overlay(inject_data_section(f, strings), payload)
            injected = cand.sections[-1].length
        data = write_texe(cand)
        _check_functionality(f, data)
        if oracle(data) == 0:
            return AttackOutcome(path, category, True, True, q, len(payload) + injected)
        if budget.mode == "hillclimb":
            # acceptance is flip-or-restart: failed mutants are discarded, and
            # a cold streak triggers a fresh starting payload
            if fresh:
                current, streak = payload, 0
            else:
                streak += 1
                if streak >= _RESTART_AFTER:
                    current = None
    return AttackOutcome(path, category, True, False, budget.max_queries, 0)


def attack_corpus(oracle, corpus: Corpus, budget: AttackBudget,
                  byte_bank: bytes | None = None, string_bank=BENIGN_STRINGS):
    """Attack every malicious sample in manifest order."""
    outcomes = []
    for idx, record in enumerate(corpus.malicious()):
        f = parse_texe(corpus.read(record))
        outcomes.append(
            attack_sample(oracle, f, budget, sample_index=idx, byte_bank=byte_bank,
                          string_bank=string_bank, path=record.path,
                          category=record.category)
        )
    return outcomes


@dataclass
class EvasionReport:
    """Evasion rates with their raw counts; undefined rates are ``None``."""

    evaded: dict
    detected: dict
    per_category: dict
    total: float | None

    @property
    def categories(self):
        return sorted(self.detected)


def evasion_rate(outcomes) -> EvasionReport:
    """Per-category and total evaded/detected ratios.

    A category the detector never flagged has no denominator; its rate is
    ``None`` (undefined), never zero.
    """
    if not outcomes:
        raise UsageError("evasion_rate needs at least one outcome")
    evaded: dict = {}
    detected: dict = {}
    for o in outcomes:
        detected.setdefault(o.category, 0)
        evaded.setdefault(o.category, 0)
        if o.detected_before:
            detected[o.category] += 1
            evaded[o.category] += o.evaded
    per_category = {c: (evaded[c] / detected[c] if detected[c] else None) for c in detected}
    total_det = sum(detected.values())
    total = sum(evaded.values()) / total_det if total_det else None
    return EvasionReport(evaded, detected, per_category, total)


def write_outcomes_csv(outcomes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "category", "detected_before", "evaded",
                    "queries_used", "payload_size"])
        for o in outcomes:
            w.writerow([o.path, o.category, str(o.detected_before).lower(),
                        str(o.evaded).lower(), o.queries_used, o.payload_size])
