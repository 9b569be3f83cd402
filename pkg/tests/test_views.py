"""View extraction: byte windows, string hashing, and overlay blindness."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from armd.errors import ConfigError
from armd.texe import (KIND_CODE, KIND_DATA, append_overlay, build_texe,
                       gen_corpus, inject_data_section, parse_texe, write_texe)
from armd.views import (BYTE_VOCAB, PAD_BYTE, PAD_STRING, SampleViews,
                        ViewConfig, extract_binary_view, extract_source_view,
                        extract_views, fnv1a64, printable_runs, string_token)


def reference_fnv1a64(data):
    """Independent FNV-1a/64 per the published algorithm parameters."""
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h * 1099511628211) % (1 << 64)
    return h


@given(st.binary(max_size=64))
@settings(max_examples=200, deadline=None)
def test_fnv1a64_matches_reference(data):
    assert fnv1a64(data) == reference_fnv1a64(data)


def test_fnv1a64_known_vectors():
    # published test vectors for 64-bit FNV-1a
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_view_config_validation():
    ViewConfig()  # defaults fine
    with pytest.raises(ConfigError):
        ViewConfig(binary_len=100)
    with pytest.raises(ConfigError):
        ViewConfig(source_vocab=1)
    with pytest.raises(ConfigError):
        ViewConfig(source_len=0)


def test_binary_view_pads_and_truncates():
    cfg = ViewConfig(binary_len=512)
    v = extract_binary_view(bytes([0x41, 0x00]), cfg)
    assert v.shape == (512,) and v.dtype == np.int64
    assert list(v[:4]) == [0x41, 0x00, PAD_BYTE, PAD_BYTE]
    assert np.all(v[2:] == PAD_BYTE)
    long = extract_binary_view(bytes(range(256)) * 4, cfg)
    assert np.array_equal(long, np.tile(np.arange(256), 2))
    assert long.max() < BYTE_VOCAB


def test_printable_runs_extraction():
    payload = b"\x00abcd\x01xy\x02longer run here\x7f!!!!"
    runs = printable_runs(payload, 4)
    assert runs == [b"abcd", b"longer run here", b"!!!!"]
    assert printable_runs(b"", 4) == []
    assert printable_runs(b"\x00\x01\x02", 4) == []
    # boundary characters: space (0x20) and tilde (0x7e) are printable
    assert printable_runs(b" ~~ ", 4) == [b" ~~ "]
    assert printable_runs(b"abc", 4) == []
    assert printable_runs(b"abcd", 4) == [b"abcd"]


@given(st.binary(max_size=80), st.integers(1, 6))
@settings(max_examples=150, deadline=None)
def test_printable_runs_properties(payload, min_len):
    runs = printable_runs(payload, min_len)
    for r in runs:
        assert len(r) >= min_len
        assert all(0x20 <= b <= 0x7E for b in r)
        assert r in payload
    # maximality: runs cover every printable byte that sits in a long-enough run
    naive, cur = [], bytearray()
    for b in payload + b"\x00":
        if 0x20 <= b <= 0x7E:
            cur.append(b)
        else:
            if len(cur) >= min_len:
                naive.append(bytes(cur))
            cur.clear()
    assert runs == naive


def test_string_token_range_and_stability():
    cfg = ViewConfig()
    seen = set()
    for s in (b"abcd", b"hello world", b"KERNEL32.dll", b"    "):
        t = string_token(s, cfg)
        assert 1 <= t < cfg.source_vocab
        assert t == string_token(s, cfg)
        seen.add(t)
    assert len(seen) == 4  # no collisions among these
    assert string_token(b"abcd", cfg) == 1 + reference_fnv1a64(b"abcd") % (cfg.source_vocab - 1)


def test_source_view_orders_and_pads():
    cfg = ViewConfig(source_len=8)
    f = build_texe(1, [(KIND_CODE, b"\x00run one\x00\x01"), (KIND_DATA, b"second\x00pair")])
    v = extract_source_view(f, cfg)
    assert v.shape == (8,)
    expect = [string_token(b"run one", cfg), string_token(b"second", cfg),
              string_token(b"pair", cfg)]
    assert list(v[:3]) == expect
    assert np.all(v[3:] == PAD_STRING)


def test_source_view_truncates_at_capacity():
    cfg = ViewConfig(source_len=3)
    f = build_texe(1, [(KIND_DATA, b"\x00".join(b"word%d" % i for i in range(10)))])
    v = extract_source_view(f, cfg)
    assert v.shape == (3,)
    assert np.all(v != PAD_STRING)


def test_overlay_invisible_to_source_view():
    cfg = ViewConfig()
    f = build_texe(1, [(KIND_CODE, b"\x90" * 64), (KIND_DATA, b"greetings\x00editor")])
    g = append_overlay(f, b"OBVIOUSLY PRINTABLE APPENDED TEXT, LOTS OF IT " * 4)
    assert np.array_equal(extract_source_view(f, cfg), extract_source_view(g, cfg))


def test_injected_string_lands_in_source_view():
    cfg = ViewConfig()
    f = build_texe(1, [(KIND_CODE, b"\x90" * 64)])
    g = inject_data_section(f, ["abcd"])
    v = extract_source_view(g, cfg)
    tok = string_token(b"abcd", cfg)
    assert tok in v


def test_extract_views_end_to_end_asymmetry():
    """The core premise: appends move the binary view, never the source view."""
    corpus_file = write_texe(build_texe(1, [(KIND_CODE, bytes(range(200)) * 4),
                                            (KIND_DATA, b"alpha\x00beta\x00gamma")]))
    cfg = ViewConfig()
    before = extract_views(corpus_file, cfg)
    mutated = write_texe(append_overlay(parse_texe(corpus_file), b"Z" * 100))
    after = extract_views(mutated, cfg)
    assert np.array_equal(before.source_tokens, after.source_tokens)
    assert not np.array_equal(before.binary_tokens, after.binary_tokens)
    # and the change is exactly where the pad used to be
    n = len(corpus_file)
    assert np.array_equal(before.binary_tokens[:n], after.binary_tokens[:n])


def test_extract_views_per_corpus_property(tmp_path):
    """Overlay blindness across a real generated corpus, zero tolerance."""
    c = gen_corpus(tmp_path, seed=5, n_benign=6, n_malicious=6)
    cfg = ViewConfig()
    rng = np.random.default_rng(5)
    for r in c.records:
        raw = c.read(r)
        payload = rng.integers(0, 256, int(rng.integers(1, 600)), dtype=np.uint8).tobytes()
        mutated = write_texe(append_overlay(parse_texe(raw), payload))
        a, b = extract_views(raw, cfg), extract_views(mutated, cfg)
        assert np.array_equal(a.source_tokens, b.source_tokens)
        if len(raw) < cfg.binary_len:
            assert not np.array_equal(a.binary_tokens, b.binary_tokens)


def test_sample_views_label_passthrough():
    raw = write_texe(build_texe(1, [(KIND_CODE, b"\x90" * 32)]))
    v = extract_views(raw, ViewConfig(), label=1)
    assert v.label == 1
    assert isinstance(v, SampleViews)
