"""Attack harness semantics, driven by synthetic oracles with known behavior.

Real detectors are slow and their verdicts are hard to reason about, so these
tests use hand-built oracles (parity of overlay length, call counters, ...)
whose expected outcomes are analytic.
"""

import csv

import numpy as np
import pytest

from armd.attack import (MODES, AttackBudget, AttackOutcome, _check_functionality,
                         attack_corpus, attack_sample, evasion_rate,
                         write_outcomes_csv)
from armd.errors import ConfigError, ProtocolError, UsageError
from armd.texe import (KIND_CODE, KIND_DATA, build_texe, gen_corpus,
                       parse_texe, write_texe)

BASE = build_texe(1, [(KIND_CODE, b"\xe8\x13\x37" * 40), (KIND_DATA, b"evil_config\x00more")])


def parity_oracle(data: bytes) -> int:
    """Malicious iff the overlay length is even.

    The unmodified file (empty overlay) is detected, and a uniformly random
    append flips it with probability 1/2, so queries-to-evasion is geometric
    with mean 2.
    """
    return 1 if len(parse_texe(data).overlay) % 2 == 0 else 0


class RecordingOracle:
    """Wraps an oracle and keeps every queried byte string."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def __call__(self, data):
        self.calls.append(data)
        return self.inner(data)


# -- budget validation -------------------------------------------------------


def test_budget_validation():
    with pytest.raises(ConfigError, match="unknown attack mode"):
        AttackBudget(mode="gradient")
    with pytest.raises(ConfigError, match="max_payload_bytes"):
        AttackBudget(max_payload_bytes=0)
    with pytest.raises(ConfigError, match="max_queries"):
        AttackBudget(max_queries=0)
    assert AttackBudget().mode == "append_random"


# -- boundary oracles --------------------------------------------------------


@pytest.mark.parametrize("mode", MODES)
def test_unflippable_oracle_exhausts_budget(mode):
    budget = AttackBudget(max_queries=25, mode=mode, seed=1)
    out = attack_sample(lambda b: 1, BASE, budget, byte_bank=b"x" * 600)
    assert out.detected_before and not out.evaded
    assert out.queries_used == budget.max_queries
    assert out.payload_size == 0


def test_benign_sample_is_skipped():
    out = attack_sample(lambda b: 0, BASE, AttackBudget(), path="f.texe", category="spyware")
    assert out == AttackOutcome("f.texe", "spyware", False, False, 0, 0)


def test_stateful_oracle_first_success_query_count():
    calls = 0

    def oracle(data):
        nonlocal calls
        calls += 1
        return 1 if calls < 5 else 0  # base query + 3 failures, flip on query 4

    out = attack_sample(oracle, BASE, AttackBudget(seed=3))
    assert out.evaded and out.queries_used == 4


def test_parity_oracle_mean_queries_matches_geometric():
    budget = AttackBudget(seed=9)
    outs = [attack_sample(parity_oracle, BASE, budget, sample_index=i) for i in range(300)]
    assert all(o.evaded for o in outs)
    mean_q = np.mean([o.queries_used for o in outs])
    assert 1.7 < mean_q < 2.3


def test_successful_payload_size_matches_overlay():
    rec = RecordingOracle(parity_oracle)
    out = attack_sample(rec, BASE, AttackBudget(seed=4), sample_index=2)
    assert out.evaded
    final = parse_texe(rec.calls[-1])
    assert len(final.overlay) == out.payload_size
    assert out.payload_size <= 512


# -- reproducibility ---------------------------------------------------------


def bytesum_oracle(data: bytes) -> int:
    # content-sensitive variant: flips under in-place mutation too, which a
    # pure length check cannot see (hillclimb payloads are fixed-length)
    return 1 if sum(parse_texe(data).overlay) % 2 == 0 else 0


@pytest.mark.parametrize("mode", MODES)
def test_attack_deterministic(mode):
    budget = AttackBudget(max_queries=30, mode=mode, seed=7)
    kw = dict(byte_bank=b"benign library bytes " * 40)
    a = attack_sample(bytesum_oracle, BASE, budget, sample_index=5, **kw)
    b = attack_sample(bytesum_oracle, BASE, budget, sample_index=5, **kw)
    assert a == b
    c = attack_sample(bytesum_oracle, BASE, budget, sample_index=6, **kw)
    assert (a.queries_used, a.payload_size) != (c.queries_used, c.payload_size)


def test_bigger_query_budget_only_adds_attempts():
    """Per-query randomness depends only on (seed, sample index), so raising
    max_queries preserves each early success exactly."""
    small = AttackBudget(max_queries=5, seed=11)
    big = AttackBudget(max_queries=200, seed=11)
    for i in range(50):
        a = attack_sample(parity_oracle, BASE, small, sample_index=i)
        b = attack_sample(parity_oracle, BASE, big, sample_index=i)
        if a.evaded:
            assert b.evaded and b.queries_used == a.queries_used
        else:
            assert b.evaded  # geometric with p=1/2 always lands within 200 here


# -- functionality proxy -----------------------------------------------------

ALWAYS = lambda b: 1  # noqa: E731  (keeps the attack querying for a full budget)


@pytest.mark.parametrize("mode", MODES)
def test_every_mutant_preserves_original_sections(mode):
    rec = RecordingOracle(ALWAYS)
    budget = AttackBudget(max_queries=40, mode=mode, seed=2)
    attack_sample(rec, BASE, budget, byte_bank=b"safe filler content " * 30)
    want = [(s.kind, s.payload) for s in BASE.sections]
    assert len(rec.calls) == 41  # baseline + 40 mutants
    for data in rec.calls[1:]:
        f = parse_texe(data)
        assert [(s.kind, s.payload) for s in f.sections[: len(want)]] == want
        assert 1 <= len(f.overlay) <= 512


def test_check_functionality_rejects_tampering():
    good = write_texe(BASE)
    bad = bytearray(good)
    bad[-3] ^= 0xFF  # flip a byte inside the last section payload
    with pytest.raises(ProtocolError, match="altered"):
        _check_functionality(BASE, bytes(bad))
    _check_functionality(BASE, good)  # identity passes


def test_append_benign_payloads_come_from_bank():
    bank = bytes(range(256)) * 8
    rec = RecordingOracle(ALWAYS)
    attack_sample(rec, BASE, AttackBudget(max_queries=20, mode="append_benign", seed=3),
                  byte_bank=bank)
    for data in rec.calls[1:]:
        assert parse_texe(data).overlay in bank


def test_append_benign_requires_bank():
    with pytest.raises(ConfigError, match="byte bank"):
        attack_sample(ALWAYS, BASE, AttackBudget(mode="append_benign"))


def test_dual_view_requires_string_bank():
    with pytest.raises(ConfigError, match="string bank"):
        attack_sample(ALWAYS, BASE, AttackBudget(mode="dual_view"), string_bank=())


def test_dual_view_adds_one_data_section_of_bank_strings():
    bank = ("alpha", "beta", "gamma", "delta")
    rec = RecordingOracle(ALWAYS)
    attack_sample(rec, BASE, AttackBudget(max_queries=30, mode="dual_view", seed=5),
                  string_bank=bank)
    for data in rec.calls[1:]:
        f = parse_texe(data)
        assert len(f.sections) == len(BASE.sections) + 1
        extra = f.sections[-1]
        assert extra.kind == KIND_DATA
        parts = extra.payload.split(b"\x00")
        assert 1 <= len(parts) <= 5
        assert all(p.decode() in bank for p in parts)


def test_hillclimb_payloads_fill_budget_without_bank():
    rec = RecordingOracle(ALWAYS)
    budget = AttackBudget(max_payload_bytes=64, max_queries=30, mode="hillclimb", seed=6)
    attack_sample(rec, BASE, budget)
    for data in rec.calls[1:]:
        assert len(parse_texe(data).overlay) == 64


# -- corpus-level driver and reporting ---------------------------------------


@pytest.fixture(scope="module")
def mini_corpus(tmp_path_factory):
    return gen_corpus(tmp_path_factory.mktemp("atk"), seed=5, n_benign=3, n_malicious=6,
                      size_range=(512, 1024))


def test_attack_corpus_covers_malicious_in_order(mini_corpus):
    outs = attack_corpus(parity_oracle, mini_corpus, AttackBudget(seed=12))
    mal = list(mini_corpus.malicious())
    assert [o.path for o in outs] == [r.path for r in mal]
    assert [o.category for o in outs] == [r.category for r in mal]
    assert all(o.detected_before and o.evaded for o in outs)
    again = attack_corpus(parity_oracle, mini_corpus, AttackBudget(seed=12))
    assert outs == again


def test_evasion_rate_math():
    outs = [
        AttackOutcome("a", "worm", True, True, 3, 10),
        AttackOutcome("b", "worm", True, False, 200, 0),
        AttackOutcome("c", "miner", False, False, 0, 0),
        AttackOutcome("d", "rootkit", True, True, 1, 5),
    ]
    r = evasion_rate(outs)
    assert r.per_category == {"worm": 0.5, "miner": None, "rootkit": 1.0}
    assert r.detected == {"worm": 2, "miner": 0, "rootkit": 1}
    assert r.total == pytest.approx(2 / 3)
    # total recombines from per-category counts, never from averaging rates
    assert r.total == sum(r.evaded.values()) / sum(r.detected.values())
    assert r.categories == ["miner", "rootkit", "worm"]


def test_evasion_rate_all_undetected_is_undefined():
    outs = [AttackOutcome("a", "worm", False, False, 0, 0)]
    r = evasion_rate(outs)
    assert r.total is None and r.per_category == {"worm": None}


def test_evasion_rate_rejects_empty():
    with pytest.raises(UsageError):
        evasion_rate([])


def test_write_outcomes_csv(tmp_path):
    outs = [AttackOutcome("x.texe", "worm", True, False, 200, 0),
            AttackOutcome("y.texe", "worm", True, True, 7, 130)]
    dest = tmp_path / "outcomes.csv"
    write_outcomes_csv(outs, dest)
    rows = list(csv.reader(dest.read_text().splitlines()))
    assert rows[0] == ["path", "category", "detected_before", "evaded",
                       "queries_used", "payload_size"]
    assert rows[1] == ["x.texe", "worm", "true", "false", "200", "0"]
    assert rows[2] == ["y.texe", "worm", "true", "true", "7", "130"]
