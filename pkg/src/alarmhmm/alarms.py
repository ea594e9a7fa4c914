"""Alarm limits and alarm-sequence extraction from measurement traces.

A measurement alarms when its reading stays strictly beyond the high limit
(mean + kappa * std) or below the low limit (mean - kappa * std) for a
configurable persistence time.  High alarms of measurement ``m`` map to
symbol ``m``, low alarms to symbol ``m + n_measurements``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SchemaError

HIGH = "high"
LOW = "low"

SEQUENCE_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class AlarmSymbolCodebook:
    """Bijection between (measurement, direction) pairs and symbol indices."""

    n_measurements: int

    def __post_init__(self):
        if self.n_measurements < 1:
            raise DomainError("codebook needs at least one measurement")

    @property
    def n_symbols(self) -> int:
        return 2 * self.n_measurements

    def encode(self, measurement: int, direction: str) -> int:
        if not 0 <= measurement < self.n_measurements:
            raise DomainError(f"measurement index {measurement} out of range")
        if direction == HIGH:
            return measurement
        if direction == LOW:
            return measurement + self.n_measurements
        raise DomainError(f"direction must be '{HIGH}' or '{LOW}', got {direction!r}")

    def decode(self, symbol: int) -> tuple[int, str]:
        if not 0 <= symbol < self.n_symbols:
            raise DomainError(f"symbol {symbol} out of range for {self.n_symbols} symbols")
        if symbol < self.n_measurements:
            return symbol, HIGH
        return symbol - self.n_measurements, LOW


@dataclass
class MeasurementTrace:
    """Uniformly sampled multivariate measurement readings."""

    sample_period: float
    values: np.ndarray  # (T_samples, M_meas)
    meas_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.sample_period <= 0:
            raise DomainError("sample_period must be positive")
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DomainError("trace values must be a (samples, measurements) matrix")
        if not np.isfinite(self.values).all():
            raise DomainError("trace contains non-finite values")
        if len(self.meas_ids) != self.values.shape[1]:
            raise DomainError("meas_ids length does not match the value columns")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AlarmLimits:
    """Per-measurement normal-operation moments and the alarm multiplier."""

    mean: np.ndarray
    std: np.ndarray
    kappa: float
    meas_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.kappa < 0:
            raise DomainError("kappa must be non-negative")
        if (self.std <= 0).any():
            bad = [self.meas_ids[i] for i in np.flatnonzero(self.std <= 0)]
            raise DomainError(f"zero or negative standard deviation for: {', '.join(bad)}")

    @property
    def high(self) -> np.ndarray:
        return self.mean + self.kappa * self.std

    @property
    def low(self) -> np.ndarray:
        return self.mean - self.kappa * self.std

    @property
    def n_measurements(self) -> int:
        return self.mean.shape[0]


@dataclass
class AlarmSequence:
    """Ordered, deduplicated alarm activations for one scenario."""

    symbols: list[int]
    times: list[float]
    fault: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.symbols = [int(s) for s in self.symbols]
        self.times = [float(t) for t in self.times]

    def __len__(self) -> int:
        return len(self.symbols)

    def validate(self, n_symbols: int | None = None) -> "AlarmSequence":
        if len(self.symbols) != len(self.times):
            raise DomainError("symbols and activation times differ in length")
        if len(set(self.symbols)) != len(self.symbols):
            raise DomainError("alarm symbols must be pairwise distinct")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise DomainError("activation times must be non-decreasing")
        if n_symbols is not None:
            bad = [s for s in self.symbols if not 0 <= s < n_symbols]
            if bad:
                raise DomainError(f"symbol {bad[0]} outside [0, {n_symbols})")
        return self


def fit_limits(normal_traces: list[MeasurementTrace], kappa: float = 3.0) -> AlarmLimits:
    """Estimate per-measurement mean and standard deviation at normal
    operation, pooling the samples of all traces; limits are mean +/- kappa*std.
    """
    if not normal_traces:
        raise DomainError("fit_limits requires at least one normal-operation trace")
    ids = normal_traces[0].meas_ids
    for trace in normal_traces[1:]:
        if trace.meas_ids != ids:
            raise DomainError("all normal traces must share the same measurement ids")
    pooled = np.concatenate([trace.values for trace in normal_traces], axis=0)
    if pooled.shape[0] < 2:
        raise DomainError("fit_limits needs at least two pooled samples per measurement")
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    zero = np.flatnonzero(std <= 0)
    if zero.size:
        names = ", ".join(ids[i] for i in zero)
        raise DomainError(f"zero variance at normal operation for: {names}")
    return AlarmLimits(mean=mean, std=std, kappa=float(kappa), meas_ids=tuple(ids))


def _required_samples(persist_t: float, sample_period: float) -> int:
    # n samples cover n * sample_period seconds; a single sample qualifies
    # whenever persist_t is at most one period.
    return max(1, math.ceil(persist_t / sample_period - 1e-12))


def _first_qualifying_run(beyond: np.ndarray, min_samples: int) -> int | None:
    flags = beyond.astype(np.int8)
    edges = np.diff(np.concatenate(([0], flags, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    for start, end in zip(starts, ends):
        if end - start >= min_samples:
            return int(start)
    return None


def extract_sequence(
    trace: MeasurementTrace,
    limits: AlarmLimits,
    codebook: AlarmSymbolCodebook,
    persist_t: float = 300.0,
) -> AlarmSequence:
    """Extract the ordered alarm-symbol sequence of a trace.

    For each (measurement, direction) the earliest maximal excursion that
    stays strictly beyond the limit for at least ``persist_t`` seconds
    produces one symbol, stamped with the excursion start time.  Emissions
    are sorted by activation time, ties by ascending symbol index.
    """
    if persist_t < 0:
        raise DomainError("persist_t must be non-negative")
    if trace.n_measurements != codebook.n_measurements:
        raise DomainError(
            f"trace has {trace.n_measurements} measurements, codebook expects "
            f"{codebook.n_measurements}"
        )
    if limits.n_measurements != trace.n_measurements:
        raise DomainError("limits do not match the trace measurement count")

    min_samples = _required_samples(persist_t, trace.sample_period)
    high, low = limits.high, limits.low
    events: list[tuple[float, int]] = []
    for m in range(trace.n_measurements):
        readings = trace.values[:, m]
        for beyond, direction in (
            (readings > high[m], HIGH),
            (readings < low[m], LOW),
        ):
            start = _first_qualifying_run(beyond, min_samples)
            if start is not None:
                events.append((start * trace.sample_period, codebook.encode(m, direction)))
    events.sort(key=lambda e: (e[0], e[1]))
    return AlarmSequence(
        symbols=[symbol for _, symbol in events],
        times=[time for time, _ in events],
    ).validate(codebook.n_symbols)


def read_trace_csv(path) -> MeasurementTrace:
    """Read a ``time,<meas_id>...`` CSV with uniformly spaced time stamps."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty trace file") from None
        if not header or header[0] != "time":
            raise SchemaError(f"{path}: first column must be 'time'")
        meas_ids = header[1:]
        if not meas_ids:
            raise SchemaError(f"{path}: no measurement columns")
        times, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                times.append(float(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    if len(rows) < 2:
        raise SchemaError(f"{path}: need at least two samples to infer the sample period")
    diffs = np.diff(times)
    period = float(np.median(diffs))
    if period <= 0 or not np.allclose(diffs, period, rtol=1e-6, atol=1e-9):
        raise SchemaError(f"{path}: time stamps are not uniformly spaced")
    return MeasurementTrace(sample_period=period, values=np.asarray(rows), meas_ids=meas_ids)


def write_trace_csv(path, trace: MeasurementTrace) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time"] + list(trace.meas_ids))
        for i, row in enumerate(trace.values):
            writer.writerow([repr(i * trace.sample_period)] + [repr(float(v)) for v in row])


def sequence_to_dict(sequence: AlarmSequence) -> dict:
    meta = dict(sequence.meta)
    meta.setdefault("format_version", SEQUENCE_FORMAT_VERSION)
    return {
        "fault": sequence.fault,
        "symbols": list(sequence.symbols),
        "times": list(sequence.times),
        "meta": meta,
    }


def sequence_from_dict(payload: dict) -> AlarmSequence:
    if not isinstance(payload, dict):
        raise SchemaError("sequence record must be a JSON object")
    for key in ("fault", "symbols", "times", "meta"):
        if key not in payload:
            raise SchemaError(f"sequence record is missing the '{key}' field")
    fault = payload["fault"]
    if fault is not None and not isinstance(fault, int):
        raise SchemaError("fault must be an integer or null")
    symbols, times, meta = payload["symbols"], payload["times"], payload["meta"]
    if not isinstance(symbols, list) or not all(isinstance(s, int) for s in symbols):
        raise SchemaError("symbols must be a list of integers")
    if not isinstance(times, list) or len(times) != len(symbols):
        raise SchemaError("times must be a list matching symbols in length")
    if not isinstance(meta, dict):
        raise SchemaError("meta must be an object")
    return AlarmSequence(symbols=symbols, times=[float(t) for t in times], fault=fault, meta=meta)


def write_sequences_jsonl(path, sequences: list[AlarmSequence]) -> None:
    with open(path, "w") as handle:
        for sequence in sequences:
            handle.write(json.dumps(sequence_to_dict(sequence), sort_keys=True) + "\n")


def read_sequences_jsonl(path) -> list[AlarmSequence]:
    sequences = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not valid JSON ({exc})") from None
            try:
                sequences.append(sequence_from_dict(payload))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return sequences
