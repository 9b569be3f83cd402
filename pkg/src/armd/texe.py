"""TEXE toy executable container: parser, writer, mutations, corpus generator.

Layout (all integers little-endian):

    magic "TEXE" | version u16 | section_count u16
    section table: per section  kind u8 (1=code, 2=data) | offset u32 | length u32
    section payloads, packed back-to-back immediately after the table
    overlay: any trailing bytes after the last section

Parsing is strict: section payloads must sit exactly where the table says,
with no gaps and no overlaps, so ``write_texe(parse_texe(b)) == b`` holds for
every accepted file.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ValidationError

MAGIC = b"TEXE"
_HEADER = struct.Struct("<4sHH")
_ENTRY = struct.Struct("<BII")
KIND_CODE = 1
KIND_DATA = 2


class TexeError(DataError):
    """Base for TEXE parse/serialize failures."""


class BadMagicError(TexeError):
    pass


class TruncatedHeaderError(TexeError):
    pass


class BadSectionKindError(TexeError):
    pass


class SectionBoundsError(TexeError):
    pass


class SectionOverlapError(TexeError):
    pass


class SectionGapError(TexeError):
    pass


class SerializeError(TexeError):
    pass


@dataclass(frozen=True)
class Section:
    kind: int
    offset: int
    length: int
    payload: bytes


@dataclass(frozen=True)
class TexeFile:
    version: int
    sections: tuple
    overlay: bytes = b""


def build_texe(version: int, parts, overlay: bytes = b"") -> TexeFile:
    """Assemble a file from (kind, payload) pairs, computing canonical offsets."""
    parts = list(parts)
    offset = _HEADER.size + _ENTRY.size * len(parts)
    sections = []
    for kind, payload in parts:
        sections.append(Section(kind, offset, len(payload), bytes(payload)))
        offset += len(payload)
    return TexeFile(version, tuple(sections), bytes(overlay))


def parse_texe(data: bytes) -> TexeFile:
    if len(data) < _HEADER.size:
        if len(data) >= 4 and data[:4] != MAGIC:
            raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        raise TruncatedHeaderError(f"file of {len(data)} bytes is shorter than the 8-byte header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    table_end = _HEADER.size + _ENTRY.size * count
    if len(data) < table_end:
        raise TruncatedHeaderError(
            f"section table needs {table_end} bytes but the file has only {len(data)}"
        )
    expected = table_end
    sections = []
    for i in range(count):
        kind, offset, length = _ENTRY.unpack_from(data, _HEADER.size + _ENTRY.size * i)
        if kind not in (KIND_CODE, KIND_DATA):
            raise BadSectionKindError(f"section {i} has unknown kind {kind}")
        if offset + length > len(data):
            raise SectionBoundsError(
                f"section {i} spans [{offset}, {offset + length}) beyond the "
                f"{len(data)}-byte file"
            )
        if offset < expected:
            raise SectionOverlapError(
                f"section {i} starts at {offset}, overlapping the previous region "
                f"ending at {expected}"
            )
        if offset > expected:
            raise SectionGapError(
                f"section {i} starts at {offset}, leaving a gap after {expected}"
            )
        sections.append(Section(kind, offset, length, bytes(data[offset : offset + length])))
        expected = offset + length
    return TexeFile(version, tuple(sections), bytes(data[expected:]))


def write_texe(f: TexeFile) -> bytes:
    if not 0 <= f.version <= 0xFFFF:
        raise SerializeError(f"version {f.version} does not fit in u16")
    if len(f.sections) > 0xFFFF:
        raise SerializeError(f"{len(f.sections)} sections do not fit in u16")
    out = bytearray(_HEADER.pack(MAGIC, f.version, len(f.sections)))
    expected = _HEADER.size + _ENTRY.size * len(f.sections)
    for i, s in enumerate(f.sections):
        if s.kind not in (KIND_CODE, KIND_DATA):
            raise SerializeError(f"section {i} has unknown kind {s.kind}")
        if s.length != len(s.payload):
            raise SerializeError(
                f"section {i} declares length {s.length} but the payload has {len(s.payload)}"
            )
        if s.offset != expected:
            raise SerializeError(
                f"section {i} offset {s.offset} is not canonical (expected {expected})"
            )
        if s.length > 0xFFFFFFFF:
            raise SerializeError(f"section {i} length {s.length} does not fit in u32")
        out += _ENTRY.pack(s.kind, s.offset, s.length)
        expected += s.length
    for s in f.sections:
        out += s.payload
    out += f.overlay
    return bytes(out)


# -- functionality-preserving mutations -------------------------------------


def append_overlay(f: TexeFile, payload: bytes) -> TexeFile:
    """Return a copy with ``payload`` appended after all sections."""
    if not payload:
        raise ValidationError("overlay payload must be non-empty")
    return TexeFile(f.version, f.sections, f.overlay + bytes(payload))


def _printable(s: str) -> bool:
    return all(0x20 <= ord(c) <= 0x7E for c in s)


def inject_data_section(f: TexeFile, strings) -> TexeFile:
    """Return a copy with one extra data section holding NUL-separated strings."""
    strings = list(strings)
    if not strings:
        raise ValidationError("must inject at least one string")
    for s in strings:
        if len(s) < 4:
            raise ValidationError(f"injected string {s!r} is shorter than 4 characters")
        if not _printable(s):
            raise ValidationError(f"injected string {s!r} contains non-printable characters")
    payload = b"\x00".join(s.encode("ascii") for s in strings)
    parts = [(s.kind, s.payload) for s in f.sections] + [(KIND_DATA, payload)]
    return build_texe(f.version, parts, f.overlay)


# -- motif bank -------------------------------------------------------------

# Fixed, seed-independent content banks.  Category byte motifs carry a unique
# marker byte (>= 0x80, so never printable) at two positions, which keeps the
# per-category motif sets pairwise disjoint and out of the printable-string
# extractor's reach.

_CATEGORY_MARK = {
    "adware": 0xA0,
    "backdoor": 0xA1,
    "botnet": 0xA2,
    "dropper": 0xA3,
    "ransomware": 0xA4,
    "rootkit": 0xA5,
    "spyware": 0xA6,
    "virus": 0xA7,
}

ALL_CATEGORIES = tuple(_CATEGORY_MARK)
DEFAULT_CATEGORIES = ("botnet", "ransomware", "rootkit", "spyware", "virus")


def _category_motifs(mark: int):
    out = []
    for i in range(6):
        m = bytes([0xE8, mark, 0x10 + i, 0x0F, mark, 0xC0 + i])
        m += bytes([0x90, mark])[: i % 3]  # lengths cycle 6, 7, 8
        out.append(m)
    return tuple(out)


CATEGORY_MOTIFS = {name: _category_motifs(mark) for name, mark in _CATEGORY_MARK.items()}

BENIGN_MOTIFS = (
    b"\x55\x8b\xec\x83\xec\x08",
    b"\x55\x8b\xec\x83\xec\x1c\x90",
    b"\x5d\xc3\xcc\xcc\xcc\xcc",
    b"\x53\x56\x57\x8b\xf1\x90",
    b"\x8b\x45\x08\x8b\x4d\x0c",
    b"\x33\xc0\x5e\x5b\xc2\x08\x00",
    b"\xff\x15\x04\x10\x00\x10",
    b"\xe9\x00\x02\x00\x00\xcc",
    b"\x6a\x00\x6a\x01\xff\xd6",
    b"\x85\xc0\x74\x0a\x8b\x06",
    b"\xc7\x45\xfc\x00\x00\x00\x00",
    b"\x8d\x4d\xf0\xe2\xfa\x90",
)

CATEGORY_STRINGS = {
    "adware": ("popup_injector", "click_redirect", "ad_tracker_cfg",
               "banner_loader", "affiliate_ping", "browser_toolbar"),
    "backdoor": ("remote_shell_bind", "auth_bypass_key", "hidden_listener",
                 "c2_heartbeat", "reverse_connect", "privileged_pipe"),
    "botnet": ("irc_command_join", "bot_herder_addr", "ddos_task_queue",
               "peer_gossip_list", "spam_relay_node", "flood_worker"),
    "dropper": ("payload_stage_two", "drop_to_temp_dir", "unpack_and_exec",
                "installer_stub", "fetch_next_stage", "silent_deploy"),
    "ransomware": ("encrypt_files_now", "ransom_note_txt", "btc_wallet_addr",
                   "aes_key_vault", "deadline_timer", "decrypt_service"),
    "rootkit": ("hook_syscall_tbl", "hide_process_id", "kernel_patch_vec",
                "stealth_driver", "ssdt_rewrite", "ring0_loader"),
    "spyware": ("keylog_buffer", "screen_grabber", "cred_harvester",
                "exfil_uploader", "mic_capture_tap", "clipboard_spy"),
    "virus": ("infect_host_exe", "self_replicate", "entry_point_jmp",
              "code_cave_write", "overwrite_pe_hdr", "mutation_engine"),
}

BENIGN_STRINGS = (
    "KERNEL32.dll", "LoadLibraryA", "GetProcAddress", "CreateFileW",
    "ReadFile", "WriteConsoleW", "user32.dll", "MessageBoxW",
    "advapi32.dll", "RegOpenKeyExW", "GetWindowTextW", "mscoree.dll",
    "Copyright (c) Example Corp", "Program Files", "version 1.0.4",
    "config.xml", "en-US resources", "release notes",
    "terms of service", "product update check", "System.Runtime",
    "SOFTWARE\\Classes", "OpenSSL 1.1.1", "Microsoft Visual C++ Runtime",
)


# -- corpus generation ------------------------------------------------------


@dataclass(frozen=True)
class CorpusParams:
    """Calibration knobs for synthetic file construction."""

    benign_motif_every: int = 64     # one planted benign motif per this many code bytes
    category_motif_every: int = 64   # likewise for category motifs in malicious files
    benign_strings: tuple = (5, 15)      # inclusive draw range per file
    category_strings: tuple = (3, 10)
    min_code_len: int = 256


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str        # "benign" | "malicious"
    category: str     # category name, or "none" for benign


@dataclass(frozen=True)
class Corpus:
    root: Path
    records: tuple

    def read(self, record: ManifestRecord) -> bytes:
        p = self.root / record.path
        try:
            return p.read_bytes()
        except OSError as e:
            raise DataError(f"cannot read corpus file {p}: {e}") from e

    def benign(self):
        return [r for r in self.records if r.label == "benign"]

    def malicious(self):
        return [r for r in self.records if r.label == "malicious"]


def _plant(rng, code: bytearray, bank, count: int):
    for _ in range(count):
        m = bank[int(rng.integers(0, len(bank)))]
        pos = int(rng.integers(0, len(code) - len(m) + 1))
        code[pos : pos + len(m)] = m


def _gen_file(rng, size_range, params: CorpusParams, category) -> bytes:
    target = int(rng.integers(size_range[0], size_range[1] + 1))
    lo, hi = params.benign_strings
    strs = [BENIGN_STRINGS[int(rng.integers(0, len(BENIGN_STRINGS)))]
            for _ in range(int(rng.integers(lo, hi + 1)))]
    if category is not None:
        bank = CATEGORY_STRINGS[category]
        lo, hi = params.category_strings
        strs += [bank[int(rng.integers(0, len(bank)))]
                 for _ in range(int(rng.integers(lo, hi + 1)))]
        strs = [strs[i] for i in rng.permutation(len(strs))]
    data_payload = b"\x00".join(s.encode("ascii") for s in strs)
    overhead = _HEADER.size + 2 * _ENTRY.size
    code_len = max(params.min_code_len, target - overhead - len(data_payload))
    code = bytearray(rng.integers(0, 256, code_len, dtype=np.uint8).tobytes())
    _plant(rng, code, BENIGN_MOTIFS, max(1, code_len // params.benign_motif_every))
    if category is not None:
        _plant(rng, code, CATEGORY_MOTIFS[category],
               max(1, code_len // params.category_motif_every))
    return write_texe(build_texe(1, [(KIND_CODE, bytes(code)), (KIND_DATA, data_payload)]))


def gen_corpus(out_dir, seed: int, n_benign: int, n_malicious: int,
               categories=DEFAULT_CATEGORIES, size_range=(1536, 3072),
               params: CorpusParams | None = None) -> Corpus:
    """Write a labelled corpus plus ``manifest.csv`` into ``out_dir``.

    Benign files are a code section of motif-biased random bytes plus a data
    section of benign strings; malicious files additionally carry category
    code motifs (roughly one per 64 code bytes) and category strings.
    Malicious categories are assigned round-robin.  The same arguments always
    produce byte-identical files.
    """
    categories = tuple(categories)
    if n_benign < 0 or n_malicious < 0 or n_benign + n_malicious == 0:
        raise ConfigError("corpus must contain at least one file")
    if n_malicious > 0 and not categories:
        raise ConfigError("malicious files requested but no categories given")
    for c in categories:
        if c not in CATEGORY_MOTIFS:
            raise ConfigError(f"unknown category {c!r}; known: {', '.join(ALL_CATEGORIES)}")
    lo, hi = int(size_range[0]), int(size_range[1])
    if not (512 <= lo <= hi <= 16384):
        raise ConfigError(f"size range [{lo}, {hi}] outside the allowed [512, 16384]")
    params = params or CorpusParams()
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_benign):
        name = f"benign_{i:05d}.texe"
        (root / name).write_bytes(_gen_file(rng, (lo, hi), params, None))
        records.append(ManifestRecord(name, "benign", "none"))
    for i in range(n_malicious):
        cat = categories[i % len(categories)]
        name = f"malicious_{i:05d}.texe"
        (root / name).write_bytes(_gen_file(rng, (lo, hi), params, cat))
        records.append(ManifestRecord(name, "malicious", cat))
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "category"])
        for r in records:
            w.writerow([r.path, r.label, r.category])
    return Corpus(root, tuple(records))


def load_manifest(corpus_dir) -> Corpus:
    root = Path(corpus_dir)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"no manifest.csv in {root}")
    records = []
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "category"]:
            raise DataError(f"unexpected manifest header {header} in {manifest}")
        for row in reader:
            if len(row) != 3:
                raise DataError(f"malformed manifest row {row} in {manifest}")
            path, label, category = row
            if label not in ("benign", "malicious"):
                raise DataError(f"unknown label {label!r} for {path} in {manifest}")
            records.append(ManifestRecord(path, label, category))
    if not records:
        raise DataError(f"empty manifest {manifest}")
    return Corpus(root, tuple(records))


def benign_byte_bank(corpus: Corpus, cap: int = 1 << 18) -> bytes:
    """Concatenated section payloads of benign files, for attack payloads."""
    chunks = []
    total = 0
    for r in corpus.benign():
        f = parse_texe(corpus.read(r))
        for s in f.sections:
            chunks.append(s.payload)
            total += s.length
        if total >= cap:
            break
    return b"".join(chunks)[:cap]
