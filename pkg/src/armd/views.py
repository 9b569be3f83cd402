"""Per-sample model inputs: raw byte tokens and hashed printable-string tokens.

The binary view is simply the first ``binary_len`` bytes of the whole file,
overlay included, padded with a reserved token.  The source-flavoured view
scans section payloads only — the overlay is deliberately invisible to it —
for printable ASCII runs, and hashes each run to a stable token id.  That
asymmetry is what append-style attacks probe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .texe import TexeFile, parse_texe

PAD_BYTE = 256          # binary-view padding token; raw bytes occupy 0..255
BYTE_VOCAB = 257
PAD_STRING = 0          # source-view padding token; hashes land in 1..vocab-1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class ViewConfig:
    binary_len: int = 4096      # full-scale byte detectors read ~2 MB; desk default keeps runs fast
    source_len: int = 512
    source_vocab: int = 4096
    min_string_len: int = 4

    def __post_init__(self):
        if self.binary_len < 512:
            raise ConfigError(f"binary_len must be at least 512, got {self.binary_len}")
        if self.source_len < 1 or self.source_vocab < 2 or self.min_string_len < 1:
            raise ConfigError("source view configuration must be positive")


@dataclass
class SampleViews:
    binary_tokens: np.ndarray
    source_tokens: np.ndarray
    label: int | None = None


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def extract_binary_view(data: bytes, cfg: ViewConfig) -> np.ndarray:
    """First ``binary_len`` raw bytes as tokens, padded with ``PAD_BYTE``."""
    n = min(len(data), cfg.binary_len)
    out = np.full(cfg.binary_len, PAD_BYTE, dtype=np.int64)
    out[:n] = np.frombuffer(data, dtype=np.uint8, count=n)
    return out


def printable_runs(payload: bytes, min_len: int):
    """Maximal runs of printable ASCII (0x20–0x7E) of at least ``min_len`` bytes."""
    if not payload:
        return []
    b = np.frombuffer(payload, dtype=np.uint8)
    mask = ((b >= 0x20) & (b <= 0x7E)).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask, [0]))))
    return [payload[a:z] for a, z in zip(edges[::2], edges[1::2]) if z - a >= min_len]


def string_token(s: bytes, cfg: ViewConfig) -> int:
    return 1 + fnv1a64(s) % (cfg.source_vocab - 1)


def extract_source_view(f: TexeFile, cfg: ViewConfig) -> np.ndarray:
    """Hashed printable strings from section payloads, in section order.

    The overlay contributes nothing.  Output is truncated or padded with
    ``PAD_STRING`` to exactly ``source_len`` tokens.
    """
    out = np.full(cfg.source_len, PAD_STRING, dtype=np.int64)
    n = 0
    for sec in f.sections:
        for run in printable_runs(sec.payload, cfg.min_string_len):
            out[n] = string_token(run, cfg)
            n += 1
            if n == cfg.source_len:
                return out
    return out


def extract_views(data: bytes, cfg: ViewConfig, label: int | None = None) -> SampleViews:
    """Both views of a serialized TEXE file."""
    f = parse_texe(data)
    return SampleViews(
        binary_tokens=extract_binary_view(data, cfg),
        source_tokens=extract_source_view(f, cfg),
        label=label,
    )
