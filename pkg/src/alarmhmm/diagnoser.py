"""Single-HMM fault diagnoser: faults are hidden states, alarms observables.

Training seeds one state per fault (diagonally dominant transitions,
per-fault alarm frequencies as emissions) and then runs unsupervised
Baum-Welch over all sequences pooled; because the states start from the
labeled per-fault statistics, state ``i`` is identified with fault ``i``
throughout.  Diagnosis decodes a sequence with Viterbi and reports the
most recurring state of the best path as the fault, plus a second opinion
from the runner-up path.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alarms import AlarmSequence, AlarmSymbolCodebook
from .errors import DomainError, ModelFormatError, UnknownSymbolError
from .hmm import (
    FitConfig,
    Hmm,
    StatePath,
    as_observations,
    fit,
    hmm_from_dict,
    hmm_to_dict,
    k_best_paths,
    viterbi,
)

#: trained self-transition mass below this triggers a diagnostic warning,
#: since the state-to-fault identity rests on the diagonal structure
SELF_TRANSITION_WARN = 0.5


@dataclass
class LabeledSequence:
    """An alarm sequence together with its known root-cause fault index."""

    sequence: AlarmSequence
    fault: int

    @property
    def symbols(self) -> list[int]:
        return self.sequence.symbols


def as_labeled(sequences: list[AlarmSequence]) -> list[LabeledSequence]:
    """Wrap alarm sequences whose ``fault`` field is set; reject unlabeled ones."""
    labeled = []
    for index, sequence in enumerate(sequences):
        if sequence.fault is None:
            raise DomainError(f"sequence {index} has no fault label")
        labeled.append(LabeledSequence(sequence=sequence, fault=int(sequence.fault)))
    return labeled


@dataclass
class DiagnoserModel:
    """Trained HMM plus the fault and alarm-symbol naming around it."""

    hmm: Hmm
    fault_names: tuple[str, ...]
    codebook: AlarmSymbolCodebook
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.fault_names) != self.hmm.n_states:
            raise DomainError("one fault name per hidden state required")
        if self.codebook.n_symbols != self.hmm.n_symbols:
            raise DomainError("codebook size does not match the model alphabet")

    @property
    def n_faults(self) -> int:
        return self.hmm.n_states


@dataclass(frozen=True)
class Diagnosis:
    """Primary and secondary fault candidates with their decoded paths."""

    primary_fault: int
    secondary_fault: int | None
    path: StatePath
    second_path: StatePath | None


@dataclass
class AccuracyCurve:
    """Classification accuracy as a function of the prefix length shown."""

    lengths: np.ndarray     # 1..L_max
    accuracy: np.ndarray    # fraction correct at each length
    n_correct: np.ndarray
    n_total: int
    confusion: np.ndarray   # (L_max, n_faults, n_faults): true x diagnosed counts


def _mode(states: np.ndarray, n_states: int) -> int:
    counts = np.bincount(states, minlength=n_states)
    return int(np.argmax(counts))  # ties resolve to the lowest index


def _second_mode(states: np.ndarray, n_states: int, primary: int) -> int | None:
    counts = np.bincount(states, minlength=n_states)
    counts[primary] = 0
    if counts.max() == 0:
        return None
    return int(np.argmax(counts))


def train_diagnoser(
    training: list[LabeledSequence],
    priors: np.ndarray | None = None,
    config: FitConfig | None = None,
    *,
    codebook: AlarmSymbolCodebook,
    fault_names: dict[int, str] | None = None,
    self_transition: float = 0.9,
    init_smoothing: float = 0.5,
    hard_mask: bool = True,
    hard_mask_off_diagonal: float = 1e-3,
) -> DiagnoserModel:
    """Build and train the diagnoser HMM.

    Initialization uses the labels: the transition matrix starts diagonally
    dominant (``self_transition`` on the diagonal, the rest uniform),
    emissions start from per-fault symbol frequencies with additive
    smoothing, and the initial distribution comes from ``priors`` (e.g.
    equipment failure rates) or is uniform.  Baum-Welch then runs
    unsupervised on all sequences pooled.

    By default the diagonal structure is hard: off-diagonal transition
    mass is pinned at ``hard_mask_off_diagonal`` and not re-estimated,
    which is what keeps each state identified with its seeded fault.  With
    ``hard_mask=False`` the transitions start at ``self_transition`` on
    the diagonal and are re-estimated freely; prolonged unsupervised EM
    can then let one state capture alarm symbols shared between faults,
    which degrades the modal-state diagnosis rule.
    """
    if config is None:
        config = FitConfig()
    if not training:
        raise DomainError("training requires at least one labeled sequence")
    labels = sorted({item.fault for item in training})
    n_faults = labels[-1] + 1
    missing = [f for f in range(n_faults) if f not in set(labels)]
    if labels[0] < 0:
        raise DomainError("fault indices must be non-negative")
    if missing:
        raise DomainError(f"fault {missing[0]} has no training sequences")
    n_symbols = codebook.n_symbols
    for item in training:
        if len(item.sequence) == 0:
            raise DomainError("training sequences must be non-empty")
        bad = [s for s in item.sequence.symbols if not 0 <= s < n_symbols]
        if bad:
            raise DomainError(f"training symbol {bad[0]} outside [0, {n_symbols})")

    if priors is not None:
        initial = np.asarray(priors, dtype=float)
        if initial.shape != (n_faults,):
            raise DomainError(f"priors must have one entry per fault ({n_faults})")
        if abs(initial.sum() - 1.0) > 1e-6 or (initial < 0).any():
            raise DomainError("priors must be non-negative and sum to 1 within 1e-6")
        initial = initial / initial.sum()
    else:
        initial = np.full(n_faults, 1.0 / n_faults)

    off_diagonal = hard_mask_off_diagonal if hard_mask else (
        (1.0 - self_transition) / (n_faults - 1) if n_faults > 1 else 0.0
    )
    transition = np.full((n_faults, n_faults), off_diagonal)
    np.fill_diagonal(transition, 1.0 - off_diagonal * (n_faults - 1))

    counts = np.full((n_faults, n_symbols), init_smoothing, dtype=float)
    for item in training:
        for symbol in item.sequence.symbols:
            counts[item.fault, symbol] += 1.0
    emission = counts / counts.sum(axis=1, keepdims=True)

    start = Hmm(transition=transition, emission=emission, initial=initial)
    if hard_mask:
        config = FitConfig(
            max_iterations=config.max_iterations,
            rel_tol=config.rel_tol,
            emission_floor=config.emission_floor,
            seed=config.seed,
            update_transitions=False,
        )
    model, trace = fit(start, [item.symbols for item in training], config)

    diagonal = np.diag(model.transition)
    weak = np.flatnonzero(diagonal < SELF_TRANSITION_WARN)
    if weak.size:
        warnings.warn(
            f"self-transition mass fell below {SELF_TRANSITION_WARN} for state(s) "
            f"{weak.tolist()}; the state-to-fault identity may have drifted",
            RuntimeWarning,
            stacklevel=2,
        )

    names = tuple(
        (fault_names or {}).get(fault, f"fault-{fault}") for fault in range(n_faults)
    )
    training_echo = {
        "n_sequences": len(training),
        "iterations": len(trace) - 1,
        "final_log_likelihood": float(trace[-1]),
        "max_iterations": config.max_iterations,
        "rel_tol": config.rel_tol,
        "emission_floor": config.emission_floor,
        "seed": config.seed,
        "self_transition": self_transition,
        "init_smoothing": init_smoothing,
        "hard_mask": hard_mask,
        "priors": None if priors is None else [float(p) for p in np.asarray(priors)],
    }
    return DiagnoserModel(
        hmm=model, fault_names=names, codebook=codebook, training=training_echo
    )


def diagnose(model: DiagnoserModel, sequence, *, secondary: bool = True) -> Diagnosis:
    """Diagnose one alarm sequence.

    The primary fault is the most recurring state of the Viterbi path
    (ties to the lowest index).  The secondary fault is the mode of the
    second-best path; when that coincides with the primary, the second
    most frequent state of the best path stands in, and if the best path
    is constant, the second path supplies its own runner-up state.  Only a
    single-path model (one fault) yields no secondary.
    """
    symbols = getattr(sequence, "symbols", sequence)
    try:
        obs = as_observations(symbols, model.hmm.n_symbols)
    except DomainError as exc:
        raise UnknownSymbolError(str(exc)) from None

    n = model.n_faults
    best = viterbi(model.hmm, obs)
    primary = _mode(best.states, n)

    second_path: StatePath | None = None
    secondary_fault: int | None = None
    if secondary:
        paths = k_best_paths(model.hmm, obs, 2)
        if len(paths) > 1:
            second_path = paths[1]
            candidate = _mode(second_path.states, n)
            if candidate != primary:
                secondary_fault = candidate
            else:
                secondary_fault = _second_mode(best.states, n, primary)
                if secondary_fault is None:
                    secondary_fault = _second_mode(second_path.states, n, primary)
    return Diagnosis(
        primary_fault=primary,
        secondary_fault=secondary_fault,
        path=best,
        second_path=second_path,
    )


def evaluate_prefix_accuracy(
    model: DiagnoserModel, test: list[LabeledSequence], l_max: int
) -> AccuracyCurve:
    """Accuracy and confusion counts when only prefixes are shown.

    For every test sequence and prefix length ``p`` in 1..``l_max`` the
    diagnoser sees the first ``min(p, len(sequence))`` alarms, so the
    verdict for lengths beyond the sequence is the full-sequence verdict.
    """
    if l_max < 1:
        raise DomainError("l_max must be >= 1")
    if not test:
        raise DomainError("evaluation requires at least one labeled sequence")
    n = model.n_faults
    confusion = np.zeros((l_max, n, n), dtype=np.int64)
    n_correct = np.zeros(l_max, dtype=np.int64)
    for item in test:
        symbols = item.sequence.symbols
        if not 0 <= item.fault < n:
            raise DomainError(f"test label {item.fault} outside the model's faults")
        verdicts = {
            p: diagnose(model, symbols[:p], secondary=False).primary_fault
            for p in range(1, min(l_max, len(symbols)) + 1)
        }
        for p in range(1, l_max + 1):
            verdict = verdicts[min(p, len(symbols))]
            confusion[p - 1, item.fault, verdict] += 1
            if verdict == item.fault:
                n_correct[p - 1] += 1
    return AccuracyCurve(
        lengths=np.arange(1, l_max + 1),
        accuracy=n_correct / len(test),
        n_correct=n_correct,
        n_total=len(test),
        confusion=confusion,
    )


def write_accuracy_csv(curve: AccuracyCurve, path) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("# format_version=1\n")
        writer = csv.writer(handle)
        writer.writerow(["prefix_length", "accuracy", "n_correct", "n_total"])
        for length, accuracy, correct in zip(curve.lengths, curve.accuracy, curve.n_correct):
            writer.writerow([int(length), repr(float(accuracy)), int(correct), curve.n_total])


def write_confusion_csvs(curve: AccuracyCurve, directory) -> list[Path]:
    """One ``confusion_L<p>.csv`` per prefix length, true x diagnosed counts."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    n = curve.confusion.shape[1]
    for index, length in enumerate(curve.lengths):
        path = directory / f"confusion_L{int(length):02d}.csv"
        with open(path, "w", newline="") as handle:
            handle.write("# format_version=1\n")
            writer = csv.writer(handle)
            writer.writerow(["true_fault", "diagnosed_fault", "count"])
            for true_fault in range(n):
                for diagnosed in range(n):
                    writer.writerow([true_fault, diagnosed, int(curve.confusion[index, true_fault, diagnosed])])
        written.append(path)
    return written


def diagnoser_to_dict(model: DiagnoserModel) -> dict:
    doc = hmm_to_dict(model.hmm)
    doc["faults"] = list(model.fault_names)
    doc["codebook"] = {"n_measurements": model.codebook.n_measurements}
    doc["training"] = model.training
    return doc


def diagnoser_from_dict(payload: dict) -> DiagnoserModel:
    hmm = hmm_from_dict(payload)
    for key in ("faults", "codebook"):
        if key not in payload:
            raise ModelFormatError(f"diagnoser document is missing the '{key}' section")
    faults = payload["faults"]
    if not isinstance(faults, list) or not all(isinstance(name, str) for name in faults):
        raise ModelFormatError("'faults' must be a list of fault names")
    codebook_doc = payload["codebook"]
    if not isinstance(codebook_doc, dict) or "n_measurements" not in codebook_doc:
        raise ModelFormatError("'codebook' must carry n_measurements")
    codebook = AlarmSymbolCodebook(int(codebook_doc["n_measurements"]))
    try:
        return DiagnoserModel(
            hmm=hmm,
            fault_names=tuple(faults),
            codebook=codebook,
            training=payload.get("training", {}),
        )
    except DomainError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_diagnoser(model: DiagnoserModel, path) -> None:
    Path(path).write_text(json.dumps(diagnoser_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_diagnoser(path) -> DiagnoserModel:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return diagnoser_from_dict(payload)
