"""Synthetic fault-propagation scenario generator.

Stands in for a dynamic plant simulator: every fault owns an ordered list
of propagation stages (alarm symbols with nominal onset delays), and a
scenario draws per-symbol onset jitter, optional symbol drops and adjacent
swaps from a single seed.  Fault magnitude controls how deep into the
propagation path a scenario gets, so sequence order and length both vary
across replicates, while everything stays a pure function of (graph,
scenario spec).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alarms import HIGH, AlarmSequence, AlarmSymbolCodebook, MeasurementTrace
from .errors import DomainError, SchemaError

GRAPH_FORMAT_VERSION = "1"

DEFAULT_MAGNITUDE_RANGE = (0.2, 1.0)
DEFAULT_SWAP_PROB = 0.02
DEFAULT_DROP_PROB = 0.08

#: fault groups of the bundled graph that share propagation-path prefixes
#: and are therefore expected to absorb most short-prefix misclassifications
DEFAULT_CONFUSABLE_GROUPS = ((0, 1, 2), (1, 7), (4, 8))

#: per-fault (train, test) scenario counts giving the 65/42 case-study shape
DEFAULT_TRAIN_COUNTS = (5, 8, 7, 7, 6, 6, 6, 6, 6, 8)
DEFAULT_TEST_COUNTS = (4, 4, 4, 4, 4, 5, 5, 4, 4, 4)


@dataclass(frozen=True)
class Stage:
    """Alarm symbols that turn on together, around a nominal onset delay.

    Symbols within a stage share the stage delay; simultaneous onsets are
    ordered by ascending symbol index.
    """

    symbols: tuple[int, ...]
    delay_s: float
    jitter_s: float


@dataclass(frozen=True)
class FaultPath:
    """One fault's staged propagation path plus its magnitude-to-depth rule.

    ``depth_thresholds[s]`` is the smallest magnitude that still reaches
    stage ``s``; the first threshold is zero so stage one always fires.
    """

    name: str
    stages: tuple[Stage, ...]
    depth_thresholds: tuple[float, ...]


@dataclass(frozen=True)
class PropagationGraph:
    n_measurements: int
    faults: tuple[FaultPath, ...]

    def __post_init__(self):
        if self.n_measurements < 1:
            raise DomainError("graph needs at least one measurement")
        if not self.faults:
            raise DomainError("graph needs at least one fault")
        for index, fault in enumerate(self.faults):
            if not fault.stages:
                raise DomainError(f"fault {index} has no stages")
            delays = [stage.delay_s for stage in fault.stages]
            if any(b <= a for a, b in zip(delays, delays[1:])):
                raise DomainError(f"fault {index}: stage delays must strictly increase")
            if any(stage.jitter_s < 0 for stage in fault.stages):
                raise DomainError(f"fault {index}: jitter must be non-negative")
            thresholds = fault.depth_thresholds
            if len(thresholds) != len(fault.stages):
                raise DomainError(f"fault {index}: one depth threshold per stage required")
            if thresholds[0] != 0.0:
                raise DomainError(f"fault {index}: the first depth threshold must be 0")
            if any(b < a for a, b in zip(thresholds, thresholds[1:])):
                raise DomainError(f"fault {index}: depth thresholds must be non-decreasing")
            seen: set[int] = set()
            for stage in fault.stages:
                for symbol in stage.symbols:
                    if not 0 <= symbol < self.n_symbols:
                        raise DomainError(
                            f"fault {index}: symbol {symbol} outside [0, {self.n_symbols})"
                        )
                    if symbol in seen:
                        raise DomainError(f"fault {index}: symbol {symbol} listed twice")
                    seen.add(symbol)

    @property
    def n_symbols(self) -> int:
        return 2 * self.n_measurements

    @property
    def n_faults(self) -> int:
        return len(self.faults)

    @property
    def codebook(self) -> AlarmSymbolCodebook:
        return AlarmSymbolCodebook(self.n_measurements)

    def fault_names(self) -> tuple[str, ...]:
        return tuple(fault.name for fault in self.faults)


@dataclass(frozen=True)
class ScenarioSpec:
    """A single simulated scenario: fault, severity and noise settings."""

    fault: int
    magnitude: float
    seed: int
    swap_prob: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.swap_prob <= 1.0:
            raise DomainError("swap_prob must lie in [0, 1]")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise DomainError("drop_prob must lie in [0, 1]")


def depth_for_magnitude(fault: FaultPath, magnitude: float) -> int:
    """Number of stages a fault of the given magnitude reaches."""
    return sum(1 for threshold in fault.depth_thresholds if threshold <= magnitude)


def simulate_alarm_sequence(graph: PropagationGraph, spec: ScenarioSpec) -> AlarmSequence:
    """Generate one labeled alarm sequence.

    Stages up to the magnitude-determined depth fire; each symbol's onset
    is its stage delay plus uniform jitter; non-first-stage symbols may
    drop, then adjacent activations may swap.  Deterministic per (graph,
    spec).
    """
    if not 0 <= spec.fault < graph.n_faults:
        raise DomainError(f"fault {spec.fault} not present in the graph")
    if not 0.0 < spec.magnitude <= 1.0:
        raise DomainError("magnitude must lie in (0, 1]")
    fault = graph.faults[spec.fault]
    depth = depth_for_magnitude(fault, spec.magnitude)
    rng = np.random.default_rng(spec.seed)

    events = []
    for stage_index, stage in enumerate(fault.stages[:depth]):
        for symbol in stage.symbols:
            onset = stage.delay_s + rng.uniform(-stage.jitter_s, stage.jitter_s)
            events.append((max(0.0, onset), symbol, stage_index))

    kept = []
    for onset, symbol, stage_index in events:
        dropped = rng.random() < spec.drop_prob
        if stage_index == 0 or not dropped:
            kept.append((onset, symbol))
    kept.sort(key=lambda event: (event[0], event[1]))

    times = [onset for onset, _ in kept]
    symbols = [symbol for _, symbol in kept]
    for i in range(len(symbols) - 1):
        if rng.random() < spec.swap_prob:
            symbols[i], symbols[i + 1] = symbols[i + 1], symbols[i]

    sequence = AlarmSequence(
        symbols=symbols,
        times=times,
        fault=spec.fault,
        meta={
            "fault_name": fault.name,
            "magnitude": spec.magnitude,
            "seed": spec.seed,
            "n_measurements": graph.n_measurements,
        },
    )
    return sequence.validate(graph.n_symbols)


def generate_scenario_set(
    graph: PropagationGraph,
    per_fault_counts: dict[int, tuple[int, int]],
    magnitude_range: tuple[float, float] = DEFAULT_MAGNITUDE_RANGE,
    base_seed: int = 0,
    swap_prob: float = DEFAULT_SWAP_PROB,
    drop_prob: float = DEFAULT_DROP_PROB,
) -> tuple[list[AlarmSequence], list[AlarmSequence]]:
    """Labeled training and test scenario sets.

    Magnitudes and noise draws derive deterministically from
    (base_seed, split, fault, replicate); training and test use disjoint
    seed streams.
    """
    lo, hi = magnitude_range
    if not 0.0 < lo < hi <= 1.0:
        raise DomainError("magnitude range must satisfy 0 < lo < hi <= 1")
    train: list[AlarmSequence] = []
    test: list[AlarmSequence] = []
    for fault in sorted(per_fault_counts):
        n_train, n_test = per_fault_counts[fault]
        if n_train < 1:
            raise DomainError(f"fault {fault}: at least one training scenario required")
        if n_test < 0:
            raise DomainError(f"fault {fault}: test count must be non-negative")
        for split, count, bucket in ((0, n_train, train), (1, n_test, test)):
            for replicate in range(count):
                key = (base_seed, split, fault, replicate)
                magnitude_rng = np.random.default_rng(np.random.SeedSequence(key + (0xA1,)))
                spec = ScenarioSpec(
                    fault=fault,
                    magnitude=float(magnitude_rng.uniform(lo, hi)),
                    seed=int(np.random.SeedSequence(key).generate_state(1)[0]),
                    swap_prob=swap_prob,
                    drop_prob=drop_prob,
                )
                bucket.append(simulate_alarm_sequence(graph, spec))
    return train, test


def default_scenario_counts(graph: PropagationGraph | None = None) -> dict[int, tuple[int, int]]:
    """The bundled 65-train / 42-test split across the ten default faults."""
    return {
        fault: (DEFAULT_TRAIN_COUNTS[fault], DEFAULT_TEST_COUNTS[fault])
        for fault in range(len(DEFAULT_TRAIN_COUNTS))
    }


def _staircase(*steps: tuple) -> tuple[tuple[Stage, ...], tuple[float, ...]]:
    """Build (stages, depth_thresholds) from (symbol(s), delay, jitter, threshold) rows."""
    stages, thresholds = [], []
    for symbols, delay, jitter, threshold in steps:
        if isinstance(symbols, int):
            symbols = (symbols,)
        stages.append(Stage(tuple(symbols), float(delay), float(jitter)))
        thresholds.append(float(threshold))
    return tuple(stages), tuple(thresholds)


def default_graph() -> PropagationGraph:
    """The bundled 10-fault plant over 41 measurements (82 alarm symbols).

    High alarms of measurement ``m`` are symbol ``m``, low alarms are
    ``m + 41``.  Alarms fire one at a time on a staggered schedule whose
    jitter is smaller than the gaps, so the order is mostly stable with
    occasional transpositions.  Faults 0, 1 and 2 share their first seven
    alarms (one control loop), fault 7 shares its pressure/purge section
    with fault 1, and faults 4 and 8 share their first three alarms, so
    short prefixes inside those groups are ambiguous while full-length
    sequences stay separable.
    """
    n_meas = 41

    def low(m: int) -> int:
        return m + n_meas

    # Faults 0-2: reactor-loop trouble announces itself identically
    # (reactor temperature, then vessel pressures, then vessel levels).
    group_prefix = (
        (3, 60, 15, 0.0),
        (0, 150, 35, 0.0),
        (1, 225, 35, 0.0),
        (2, 300, 35, 0.0),
        (6, 420, 40, 0.0),
        (7, 495, 40, 0.0),
        (8, 570, 40, 0.0),
    )

    fault_tables = (
        (
            "reactor temperature sensor drift",
            group_prefix + (
                (12, 700, 45, 0.0),
                (19, 780, 45, 0.0),
                (10, 860, 45, 0.0),
                (4, 1000, 50, 0.45),
                (5, 1080, 50, 0.45),
                (low(17), 1200, 55, 0.7),
                (low(36), 1280, 55, 0.7),
            ),
        ),
        (
            "C feed valve stiction",
            group_prefix + (
                (20, 700, 45, 0.0),
                (18, 780, 45, 0.0),
                (12, 860, 45, 0.0),
                (5, 1000, 50, 0.4),
                (low(14), 1080, 50, 0.4),
                (low(21), 1200, 55, 0.6),
                (29, 1280, 55, 0.6),
                (30, 1400, 55, 0.8),
                (low(15), 1480, 55, 0.8),
            ),
        ),
        (
            "E feed valve stiction",
            group_prefix + (
                (9, 700, 45, 0.0),
                (11, 780, 45, 0.0),
                (12, 860, 45, 0.0),
                (4, 1000, 50, 0.4),
                (low(26), 1080, 50, 0.4),
                (37, 1200, 55, 0.6),
                (low(16), 1280, 55, 0.6),
                (38, 1400, 55, 0.8),
            ),
        ),
        (
            "D feed valve stiction",
            (
                (15, 60, 15, 0.0),
                (2, 150, 35, 0.0),
                (5, 225, 35, 0.0),
                (8, 330, 35, 0.0),
                (17, 410, 40, 0.0),
                (24, 700, 45, 0.35),
                (low(25), 780, 45, 0.35),
                (39, 1000, 50, 0.55),
                (low(22), 1080, 50, 0.55),
                (low(6), 1200, 55, 0.8),
                (low(7), 1280, 55, 0.8),
            ),
        ),
        (
            "reactor pressure sensor drift low",
            (
                (low(0), 60, 15, 0.0),
                (12, 150, 35, 0.0),
                (low(1), 225, 35, 0.0),
                (11, 330, 35, 0.0),
                (13, 410, 40, 0.0),
                (23, 700, 45, 0.45),
                (low(19), 780, 45, 0.45),
                (33, 1000, 50, 0.7),
                (34, 1080, 50, 0.7),
            ),
        ),
        (
            "separator level sensor drift low",
            (
                (low(7), 60, 15, 0.0),
                (4, 150, 35, 0.0),
                (17, 225, 35, 0.0),
                (1, 330, 35, 0.0),
                (low(3), 410, 40, 0.0),
                (40, 700, 45, 0.4),
                (low(18), 780, 45, 0.4),
                (low(27), 1000, 50, 0.7),
                (low(28), 1080, 50, 0.7),
            ),
        ),
        (
            "condenser coolant valve fault",
            (
                (9, 60, 15, 0.0),
                (1, 150, 35, 0.0),
                (4, 225, 35, 0.0),
                (18, 330, 35, 0.0),
                (40, 410, 40, 0.0),
                (low(29), 700, 45, 0.45),
                (low(30), 780, 45, 0.45),
                (low(31), 1000, 50, 0.75),
                (low(32), 1080, 50, 0.75),
            ),
        ),
        (
            # Shares its feed-loop section (12, 20, 18, then 5/55/62/29)
            # with fault 1, so the two become confusable once prefixes
            # reach that stretch, mirroring the same-loop ambiguity.
            "A feed valve stiction",
            (
                (13, 60, 15, 0.0),
                (26, 150, 35, 0.0),
                (27, 225, 35, 0.0),
                (12, 330, 35, 0.0),
                (20, 420, 40, 0.0),
                (18, 495, 40, 0.0),
                (5, 700, 45, 0.5),
                (low(14), 780, 45, 0.5),
                (low(21), 1000, 50, 0.75),
                (29, 1080, 50, 0.75),
                (31, 1200, 55, 0.9),
                (32, 1280, 55, 0.9),
            ),
        ),
        (
            "purge valve stiction",
            (
                (low(0), 60, 15, 0.0),
                (12, 150, 35, 0.0),
                (low(1), 225, 35, 0.0),
                (28, 330, 35, 0.0),
                (low(2), 410, 40, 0.0),
                (35, 700, 45, 0.45),
                (36, 780, 45, 0.45),
                (low(23), 1000, 50, 0.7),
            ),
        ),
        (
            "reactor coolant valve stiction",
            (
                (10, 60, 15, 0.0),
                (0, 150, 35, 0.0),
                (3, 225, 35, 0.0),
                (6, 330, 35, 0.0),
                (low(33), 410, 40, 0.0),
                (low(34), 700, 45, 0.4),
                (low(35), 780, 45, 0.4),
                (low(4), 1000, 50, 0.7),
                (low(5), 1080, 50, 0.7),
            ),
        ),
    )

    faults = []
    for name, table in fault_tables:
        stages, thresholds = _staircase(*table)
        faults.append(FaultPath(name=name, stages=stages, depth_thresholds=thresholds))
    return PropagationGraph(n_measurements=n_meas, faults=tuple(faults))


def graph_to_dict(graph: PropagationGraph) -> dict:
    return {
        "format_version": GRAPH_FORMAT_VERSION,
        "n_measurements": graph.n_measurements,
        "faults": [
            {
                "name": fault.name,
                "depth_thresholds": list(fault.depth_thresholds),
                "stages": [
                    {
                        "symbols": list(stage.symbols),
                        "delay_s": stage.delay_s,
                        "jitter_s": stage.jitter_s,
                    }
                    for stage in fault.stages
                ],
            }
            for fault in graph.faults
        ],
    }


def graph_from_dict(payload: dict) -> PropagationGraph:
    if not isinstance(payload, dict):
        raise SchemaError("graph document must be a JSON object")
    for key in ("format_version", "n_measurements", "faults"):
        if key not in payload:
            raise SchemaError(f"graph document is missing the '{key}' field")
    if payload["format_version"] != GRAPH_FORMAT_VERSION:
        raise SchemaError(f"unsupported graph format_version {payload['format_version']!r}")
    try:
        faults = tuple(
            FaultPath(
                name=str(fault["name"]),
                stages=tuple(
                    Stage(
                        symbols=tuple(int(s) for s in stage["symbols"]),
                        delay_s=float(stage["delay_s"]),
                        jitter_s=float(stage["jitter_s"]),
                    )
                    for stage in fault["stages"]
                ),
                depth_thresholds=tuple(float(t) for t in fault["depth_thresholds"]),
            )
            for fault in payload["faults"]
        )
        return PropagationGraph(n_measurements=int(payload["n_measurements"]), faults=faults)
    except DomainError as exc:
        raise SchemaError(f"graph violates its invariants: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed graph document: {exc}") from exc


def save_graph(graph: PropagationGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), indent=2, sort_keys=True) + "\n")


def load_graph(path) -> PropagationGraph:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"graph file is not valid JSON: {exc}") from exc
    return graph_from_dict(payload)


def simulate_normal_trace(
    n_measurements: int,
    n_samples: int,
    sample_period: float = 10.0,
    seed: int = 0,
    noise_sd: float = 1.0,
) -> MeasurementTrace:
    """Normal-operation readings: zero baseline plus Gaussian noise."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x50)))
    values = rng.normal(0.0, noise_sd, size=(n_samples, n_measurements))
    return MeasurementTrace(
        sample_period=sample_period,
        values=values,
        meas_ids=[f"m{idx:02d}" for idx in range(n_measurements)],
    )


def simulate_fault_trace(
    graph: PropagationGraph,
    spec: ScenarioSpec,
    sample_period: float = 10.0,
    duration_s: float | None = None,
    noise_sd: float = 1.0,
    step_sds: float = 8.0,
) -> tuple[MeasurementTrace, AlarmSequence]:
    """Measurement trace whose limit crossings realize a simulated scenario.

    Each scheduled alarm becomes a step of ``step_sds`` noise standard
    deviations (up for high alarms, down for low) that starts at the
    scheduled onset and persists to the end of the trace.  Returns the
    trace together with the scheduled alarm sequence; exists to exercise
    the extraction pipeline end to end.
    """
    sequence = simulate_alarm_sequence(graph, spec)
    codebook = graph.codebook
    last_onset = max(sequence.times, default=0.0)
    if duration_s is None:
        duration_s = last_onset + 900.0
    n_samples = int(math.ceil(duration_s / sample_period)) + 1

    levels = np.zeros((n_samples, graph.n_measurements))
    for onset, symbol in sorted(zip(sequence.times, sequence.symbols)):
        measurement, direction = codebook.decode(symbol)
        start = int(math.ceil(onset / sample_period - 1e-9))
        offset = step_sds * noise_sd if direction == HIGH else -step_sds * noise_sd
        levels[start:, measurement] = offset

    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0x7C)))
    values = levels + rng.normal(0.0, noise_sd, size=levels.shape)
    trace = MeasurementTrace(
        sample_period=sample_period,
        values=values,
        meas_ids=[f"m{idx:02d}" for idx in range(graph.n_measurements)],
    )
    return trace, sequence
