"""Configuration documents, pulse-record files and results tables.

Configuration is sectioned ``key = value`` text (INI) with the sections
``source``, ``signal_channel``, ``idler_channel``, ``run`` and
``estimation``. Record files store two bits per pulse behind a fixed
header; a plain-text variant with one pulse per line is available for
debugging. Results tables are comma-separated with every float written at
full round-trip precision.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io as _io
import math
import os
import re
import struct
import zlib
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import IO, Iterable, Optional, Union

import numpy as np

from . import estimators
from .errors import ConfigError, CorruptRecordError
from .simulator import ChannelConfig, RunConfig, SourceConfig
from .tally import MAX_PULSES, TallyStats

PathLike = Union[str, os.PathLike]

# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class EstimationConfig:
    """Constants of the estimation pipelines and of the sweep harness."""

    window_factor: float = 1.0
    reference_deadtime_threshold: float = estimators.REFERENCE_DEADTIME_THRESHOLD
    dut_arm: str = "idler"
    reference_fraction: float = 1.0
    gate_ns: float = 30.0
    dead_time_ns: float = 50.0
    noise_run: str = "auto"
    noise_pulses: int = 0

    def problems(self) -> list[tuple[str, str]]:
        out = []
        for name, lo, hi in (
            ("window_factor", 0.0, None),
            ("reference_deadtime_threshold", 0.0, 1.0),
            ("reference_fraction", 0.0, 1.0),
            ("gate_ns", 0.0, None),
            ("dead_time_ns", 0.0, None),
        ):
            v = getattr(self, name)
            if not math.isfinite(v) or v < lo or (hi is not None and v > hi):
                out.append((name, f"out of range [{lo}, {hi if hi is not None else 'inf'}]: {v!r}"))
        if self.gate_ns <= 0:
            out.append(("gate_ns", "must be > 0"))
        if self.dut_arm not in ("signal", "idler"):
            out.append(("dut_arm", f"must be 'signal' or 'idler', got {self.dut_arm!r}"))
        if self.noise_run not in ("auto", "on", "off"):
            out.append(("noise_run", f"must be 'auto', 'on' or 'off', got {self.noise_run!r}"))
        if self.noise_pulses < 0:
            out.append(("noise_pulses", f"must be >= 0, got {self.noise_pulses!r}"))
        return out

    @property
    def reference_arm(self) -> str:
        return "signal" if self.dut_arm == "idler" else "idler"


@dataclass(frozen=True)
class Config:
    source: SourceConfig
    signal_channel: ChannelConfig
    idler_channel: ChannelConfig
    run: RunConfig
    estimation: EstimationConfig = field(default_factory=EstimationConfig)

    def replace(self, **sections) -> "Config":
        return Config(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **sections})


_SECTIONS = {
    "source": SourceConfig,
    "signal_channel": ChannelConfig,
    "idler_channel": ChannelConfig,
    "run": RunConfig,
    "estimation": EstimationConfig,
}
# keys without a default that every document must define
_REQUIRED = {"source": ("mean_pairs_per_pulse",), "run": ("n_pulses",)}
_INT_KEYS = {"n_pulses", "seed", "batch_size", "workers", "stream", "noise_pulses"}
_STR_KEYS = {"dut_arm", "noise_run"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _INT_KEYS:
        try:
            return int(raw.replace("_", ""))
        except ValueError:
            v = float(raw)  # accept 1e7 style when integral
            if not v.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}") from None
            return int(v)
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return v


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` line, by (section, key)."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), no)
    return out


def _parse_error(exc: configparser.Error, text: str) -> ConfigError:
    lineno = getattr(exc, "lineno", None)
    if isinstance(exc, configparser.ParsingError) and exc.errors:
        lineno = exc.errors[0][0]
    if lineno is None:
        return ConfigError([("", f"parse error: {exc.message if hasattr(exc, 'message') else exc}")])
    lines = text.splitlines()
    line = lines[lineno - 1] if 0 < lineno <= len(lines) else ""
    col = len(line) - len(line.lstrip()) + 1
    msg = str(exc).splitlines()[0]
    return ConfigError([(f"line {lineno}, column {col}", f"parse error: {msg}")])


def load_config(text: str) -> Config:
    """Parse and validate a configuration document.

    Every problem is collected before raising :class:`ConfigError`; each is
    reported with its ``section.key`` path and line number when known.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise _parse_error(exc, text) from exc
    lines = _key_lines(text)
    errors: list[tuple[str, str]] = []

    def where(section, key):
        no = lines.get((section, key))
        return f"{section}.{key}" + (f" (line {no})" if no else "")

    for section in parser.sections():
        if section not in _SECTIONS:
            errors.append((section, f"unknown section [{section}]"))
    for section in _SECTIONS:
        if section not in parser:
            errors.append((section, f"missing section [{section}]"))

    values: dict[str, dict] = {}
    for section, cls in _SECTIONS.items():
        if section not in parser:
            continue
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, raw in parser[section].items():
            if key not in known:
                errors.append((where(section, key), "unknown key"))
                continue
            try:
                kw[key] = _convert(key, raw)
            except ValueError as exc:
                errors.append((where(section, key), str(exc)))
        for key in _REQUIRED.get(section, ()):
            if key not in parser[section]:
                errors.append((f"{section}.{key}", "missing required key"))
        values[section] = kw

    built = {}
    for section, cls in _SECTIONS.items():
        kw = values.get(section)
        if kw is None or any(k not in kw for k in _REQUIRED.get(section, ())):
            continue
        obj = cls.__new__(cls)
        defaults = {f.name: f.default for f in fields(cls)}
        for name, v in {**defaults, **kw}.items():
            object.__setattr__(obj, name, v)
        problems = obj.problems()
        errors.extend((where(section, k), m) for k, m in problems)
        if not problems:
            built[section] = cls(**{**defaults, **kw})
    if errors:
        raise ConfigError(errors)
    return Config(**built)


def read_config(path: PathLike) -> Config:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())


def example_config_text() -> str:
    """Text of the shipped example configuration (laboratory regime)."""
    return resources.files("twinqe").joinpath("data/lab_regime.ini").read_text(encoding="utf-8")


def example_config() -> Config:
    return load_config(example_config_text())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: Config) -> str:
    """Canonical text of ``cfg``: fixed section and key order, exact floats.

    ``serialize_config(load_config(serialize_config(c))) == serialize_config(c)``.
    """
    out = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        out.append(f"[{section}]")
        out.extend(f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj))
        out.append("")
    return "\n".join(out)


def config_hash(cfg: Config) -> str:
    """SHA-256 hex digest of the canonical config text.

    Batch size and worker count do not affect the records, so they are
    normalized away before hashing.
    """
    run = replace(cfg.run, batch_size=RunConfig.batch_size, workers=RunConfig.workers)
    return hashlib.sha256(serialize_config(cfg.replace(run=run)).encode()).hexdigest()


# --- record files ---------------------------------------------------------------

MAGIC = b"TWQR"
FORMAT_VERSION = 1
# magic, version, flags, config hash, seed, stream, count, payload crc32
_HEADER = struct.Struct("<4sHH32sQQQI")
_TEXT_TAG = "# twinqe-records"
_TEXT_COLUMNS = "pulse_index,click_s,click_i"


@dataclass(frozen=True)
class RecordHeader:
    config_hash: str
    seed: int
    count: int
    stream: int = 0
    version: int = FORMAT_VERSION


@dataclass
class RecordFile:
    header: RecordHeader
    clicks_s: np.ndarray
    clicks_i: np.ndarray

    def tally(self) -> TallyStats:
        return TallyStats.from_clicks(self.clicks_s, self.clicks_i)

    def __eq__(self, other):
        return (
            isinstance(other, RecordFile)
            and self.header == other.header
            and np.array_equal(self.clicks_s, other.clicks_s)
            and np.array_equal(self.clicks_i, other.clicks_i)
        )


def _pack(codes: np.ndarray) -> bytes:
    """Pack 2-bit codes (signal bit 0, idler bit 1), four pulses per byte, first pulse lowest."""
    pad = (-len(codes)) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, np.uint8)])
    q = codes.reshape(-1, 4)
    return (q[:, 0] | (q[:, 1] << 2) | (q[:, 2] << 4) | (q[:, 3] << 6)).astype(np.uint8).tobytes()


def _unpack(payload: bytes, count: int) -> tuple[np.ndarray, np.ndarray]:
    b = np.frombuffer(payload, np.uint8)
    codes = np.stack([(b >> s) & 3 for s in (0, 2, 4, 6)], axis=1).reshape(-1)
    if np.any(codes[count:]):
        raise CorruptRecordError("nonzero padding bits after the last record")
    codes = codes[:count]
    return (codes & 1).astype(np.uint8), (codes >> 1).astype(np.uint8)


def _hash_bytes(h: str) -> bytes:
    try:
        raw = bytes.fromhex(h)
    except ValueError:
        raw = b""
    if len(raw) != 32:
        raise ValueError(f"config hash must be 64 hex digits, got {h!r}")
    return raw


class RecordWriter:
    """Streaming record-file writer; usable as the ``sink`` of :func:`simulator.run`.

    Batches must arrive in pulse order. The binary header's count and CRC
    are patched on :meth:`close`, so the target must be seekable.
    """

    def __init__(self, path: PathLike, config_hash: str, seed: int, stream: int = 0, fmt: Optional[str] = None):
        self.path = os.fspath(path)
        self.fmt = fmt or record_format_for(self.path)
        if self.fmt not in ("binary", "text"):
            raise ValueError(f"unknown record format {self.fmt!r}")
        self._hash = config_hash
        _hash_bytes(config_hash)
        self.seed, self.stream = int(seed), int(stream)
        self.count = 0
        self._crc = 0
        self._carry = np.zeros(0, np.uint8)
        if self.fmt == "binary":
            self._fh = open(self.path, "wb")
            self._fh.write(self._header_bytes())
        else:
            self._fh = open(self.path, "w", encoding="ascii", newline="\n")
            self._rows = []

    def _header_bytes(self) -> bytes:
        return _HEADER.pack(
            MAGIC, FORMAT_VERSION, 0, _hash_bytes(self._hash), self.seed, self.stream, self.count, self._crc
        )

    def __call__(self, start: int, clicks_s, clicks_i) -> None:
        self.write(start, clicks_s, clicks_i)

    def write(self, start: int, clicks_s, clicks_i) -> None:
        cs = np.asarray(clicks_s, np.uint8)
        ci = np.asarray(clicks_i, np.uint8)
        if start != self.count:
            raise ValueError(f"records must arrive in order: expected pulse {self.count}, got {start}")
        if cs.shape != ci.shape or np.any(cs > 1) or np.any(ci > 1):
            raise ValueError("click arrays must be equal-length 0/1 arrays")
        if self.fmt == "binary":
            codes = np.concatenate([self._carry, cs | (ci << 1)])
            whole = len(codes) - len(codes) % 4
            chunk = _pack(codes[:whole])
            self._carry = codes[whole:]
            self._crc = zlib.crc32(chunk, self._crc)
            self._fh.write(chunk)
        else:
            idx = np.arange(start, start + len(cs))
            buf = _io.StringIO()
            np.savetxt(buf, np.column_stack([idx, cs, ci]), fmt="%d", delimiter=",")
            self._rows.append(buf.getvalue())
        self.count += len(cs)

    def close(self) -> RecordHeader:
        if self._fh.closed:
            return self.header
        try:
            if self.fmt == "binary":
                if len(self._carry):
                    chunk = _pack(self._carry)
                    self._crc = zlib.crc32(chunk, self._crc)
                    self._fh.write(chunk)
                    self._carry = np.zeros(0, np.uint8)
                self._fh.seek(0)
                self._fh.write(self._header_bytes())
            else:
                self._fh.write(
                    f"{_TEXT_TAG} version={FORMAT_VERSION} config_hash={self._hash} "
                    f"seed={self.seed} stream={self.stream} count={self.count}\n{_TEXT_COLUMNS}\n"
                )
                self._fh.writelines(self._rows)
        finally:
            self._fh.close()
        return self.header

    @property
    def header(self) -> RecordHeader:
        return RecordHeader(self._hash, self.seed, self.count, self.stream)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record_format_for(path: PathLike) -> str:
    return "text" if os.fspath(path).endswith((".txt", ".csv")) else "binary"


def write_records(path: PathLike, record: RecordFile, fmt: Optional[str] = None) -> None:
    h = record.header
    with RecordWriter(path, h.config_hash, h.seed, h.stream, fmt) as w:
        w.write(0, record.clicks_s, record.clicks_i)


def _read_binary(fh: IO[bytes]) -> RecordFile:
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise CorruptRecordError("file shorter than the record header")
    magic, version, _flags, digest, seed, stream, count, crc = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CorruptRecordError("not a record file (bad magic)")
    if version != FORMAT_VERSION:
        raise CorruptRecordError(f"unsupported record format version {version}")
    if count > MAX_PULSES:
        raise CorruptRecordError(f"record count {count} exceeds the supported maximum")
    payload = fh.read()
    expected = (2 * count + 7) // 8
    if len(payload) != expected:
        raise CorruptRecordError(f"header announces {count} records ({expected} bytes), payload has {len(payload)} bytes")
    if zlib.crc32(payload) != crc:
        raise CorruptRecordError("payload checksum mismatch")
    cs, ci = _unpack(payload, count)
    return RecordFile(RecordHeader(digest.hex(), seed, count, stream, version), cs, ci)


def _read_text(fh: IO[str]) -> RecordFile:
    first = fh.readline()
    m = re.fullmatch(
        rf"{_TEXT_TAG} version=(\d+) config_hash=([0-9a-f]{{64}}) seed=(\d+) stream=(\d+) count=(\d+)\n?", first
    )
    if not m:
        raise CorruptRecordError("malformed text record header")
    version, digest, seed, stream, count = int(m[1]), m[2], int(m[3]), int(m[4]), int(m[5])
    if version != FORMAT_VERSION:
        raise CorruptRecordError(f"unsupported record format version {version}")
    if fh.readline().strip() != _TEXT_COLUMNS:
        raise CorruptRecordError("missing column header line")
    body = fh.read()
    if body and not body.endswith("\n"):
        raise CorruptRecordError("last record line is truncated")
    rows = np.zeros((0, 3), np.int64)
    if body.strip():
        try:
            rows = np.loadtxt(_io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
        except ValueError as exc:
            raise CorruptRecordError(f"malformed record line: {exc}") from exc
        if rows.shape[1] != 3:
            raise CorruptRecordError("record lines must have three columns")
    if len(rows) != count:
        raise CorruptRecordError(f"header announces {count} records, file has {len(rows)}")
    if not np.array_equal(rows[:, 0], np.arange(count)):
        raise CorruptRecordError("pulse indices are not consecutive from 0")
    if np.any((rows[:, 1:] != 0) & (rows[:, 1:] != 1)):
        raise CorruptRecordError("click values must be 0 or 1")
    return RecordFile(RecordHeader(digest, seed, count, stream, version), rows[:, 1].astype(np.uint8), rows[:, 2].astype(np.uint8))


def read_records(path: PathLike) -> RecordFile:
    """Read a binary or text record file, verifying count and checksum."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        fh.seek(0)
        if magic == MAGIC:
            return _read_binary(fh)
        try:
            text = fh.read().decode("ascii")
        except UnicodeDecodeError:
            raise CorruptRecordError("not a record file") from None
    return _read_text(_io.StringIO(text))


# --- results tables ---------------------------------------------------------------

RESULT_COLUMNS = (
    "sweep_variable",
    "value",
    "eta",
    "std_error",
    "method",
    "nrf",
    "nrf_std_error",
    "mean_sum",
    "corrections",
)
_FLOAT_COLUMNS = ("value", "eta", "std_error", "nrf", "nrf_std_error", "mean_sum")


@dataclass(frozen=True)
class ResultRow:
    sweep_variable: str
    value: Optional[float]
    eta: Optional[float]
    std_error: Optional[float]
    method: str
    nrf: Optional[float] = None
    nrf_std_error: Optional[float] = None
    mean_sum: Optional[float] = None
    corrections: frozenset = frozenset()

    @classmethod
    def from_estimate(cls, q: "estimators.QEEstimate", sweep_variable="", value=None, nrf_std_error=None):
        return cls(
            sweep_variable, value, q.eta, q.std_error, q.method, q.nrf, nrf_std_error, q.mean_sum, q.corrections_applied
        )


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (set, frozenset)):
        return ";".join(sorted(v))
    return str(v)


def format_results(rows: Iterable[ResultRow]) -> str:
    """Comma-separated table with a header row, rows in the given order."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(rows: Iterable[ResultRow], path: Optional[PathLike] = None) -> str:
    text = format_results(rows)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def parse_results(text: str) -> list[ResultRow]:
    reader = csv.DictReader(_io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise ValueError(f"results table header must be {','.join(RESULT_COLUMNS)}")
    rows = []
    for line in reader:
        kw = {}
        for c in RESULT_COLUMNS:
            v = line[c]
            if c in _FLOAT_COLUMNS:
                kw[c] = float(v) if v != "" else None
            elif c == "corrections":
                kw[c] = frozenset(v.split(";")) if v else frozenset()
            else:
                kw[c] = v
        rows.append(ResultRow(**kw))
    return rows


def read_results(path: PathLike) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_results(fh.read())
