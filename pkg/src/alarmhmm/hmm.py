"""Discrete first-order hidden Markov models.

Scaled forward/backward inference, pooled multi-sequence Baum-Welch
training and exact (k-best) Viterbi decoding over a finite observation
alphabet.  The forward/backward pass rescales at every step and keeps the
normalizers, Viterbi works entirely in log space, so long sequences do not
underflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InferenceError, ModelFormatError

MODEL_FORMAT_VERSION = "1"

#: tolerance used when checking that probability rows sum to one
ROW_SUM_TOL = 1e-9


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_distribution(name: str, arr: np.ndarray) -> None:
    rows = np.atleast_2d(arr)
    if not np.isfinite(rows).all():
        raise DomainError(f"{name} contains non-finite entries")
    if (rows < 0).any():
        raise DomainError(f"{name} contains negative entries")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise DomainError(
            f"{name} row {bad[0]} sums to {sums[bad[0]]!r}, expected 1 within {ROW_SUM_TOL}"
        )


@dataclass(frozen=True)
class Hmm:
    """A discrete hidden Markov model: the (transition, emission, initial) triple.

    Parameters
    ----------
    transition : (N, N) array; ``transition[i, j]`` is the probability of
        moving from hidden state ``i`` to state ``j``.  Rows sum to one.
    emission : (N, M) array; ``emission[j, k]`` is the probability that
        state ``j`` produces observation symbol ``k``.  Rows sum to one.
    initial : (N,) array; start-state distribution, sums to one.

    Arrays are copied and made read-only, so instances are immutable values
    that can be shared freely across threads.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        a = _frozen_array(self.transition)
        b = _frozen_array(self.emission)
        pi = _frozen_array(self.initial)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError("transition must be a square matrix")
        n = a.shape[0]
        if b.ndim != 2 or b.shape[0] != n:
            raise DomainError("emission must have one row per state")
        if pi.shape != (n,):
            raise DomainError("initial must be a length-N vector")
        _check_distribution("transition", a)
        _check_distribution("emission", b)
        _check_distribution("initial", pi)
        object.__setattr__(self, "transition", a)
        object.__setattr__(self, "emission", b)
        object.__setattr__(self, "initial", pi)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emission.shape[1]


@dataclass(frozen=True)
class TrellisResult:
    """Scaled forward/backward pass over one observation sequence.

    ``scale_factors[t]`` is the reciprocal of the unnormalized forward row
    sum at step ``t``, so ``log_likelihood == -sum(log(scale_factors))``.
    Unscaled quantities are recoverable as the scaled values divided by the
    cumulative products of the scale factors.
    """

    scaled_alpha: np.ndarray   # (T, N), every row sums to one
    scaled_beta: np.ndarray    # (T, N), rescaled with the same factors
    scale_factors: np.ndarray  # (T,), all > 0
    log_likelihood: float


@dataclass(frozen=True)
class Posteriors:
    """State and state-pair posteriors given a full observation sequence."""

    gamma: np.ndarray  # (T, N): gamma[t, i] = P(q_t = i | observations)
    xi: np.ndarray     # (T-1, N, N): xi[t, i, j] = P(q_t = i, q_{t+1} = j | observations)


@dataclass(frozen=True)
class StatePath:
    """A decoded hidden-state sequence with its joint log probability."""

    states: np.ndarray
    log_prob: float

    def __len__(self) -> int:
        return self.states.size


@dataclass(frozen=True)
class FitConfig:
    """Stopping, smoothing and reproducibility settings for :func:`fit`.

    ``emission_floor`` is applied after every M-step: emission and
    transition rows are renormalized with every entry held at or above the
    floor, which keeps decoding of test sequences containing symbols never
    seen in training from failing.  ``seed`` is reserved for randomized
    initialization helpers; ``fit`` itself is fully deterministic.  With
    ``update_transitions=False`` the transition matrix is held fixed, which
    backs hard-structured diagnoser variants.
    """

    max_iterations: int = 500
    rel_tol: float = 1e-6
    emission_floor: float = 1e-10
    seed: int = 0
    update_transitions: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.rel_tol <= 0:
            raise DomainError("rel_tol must be positive")
        if self.emission_floor < 0:
            raise DomainError("emission_floor must be non-negative")


def as_observations(obs, n_symbols: int) -> np.ndarray:
    """Validate a symbol sequence against an alphabet of ``n_symbols``.

    Accepts any 1-D integer sequence (or an object with a ``symbols``
    attribute) and returns it as an int64 array.
    """
    arr = np.asarray(getattr(obs, "symbols", obs))
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("observation sequence must be a non-empty 1-D list of symbol indices")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64, copy=True)
        if arr.dtype.kind != "f" or not np.array_equal(cast, arr):
            raise DomainError("symbol indices must be integers")
        arr = cast
    out = arr.astype(np.int64)
    bad = np.flatnonzero((out < 0) | (out >= n_symbols))
    if bad.size:
        pos = int(bad[0])
        raise DomainError(
            f"symbol {int(out[pos])} at position {pos} is outside [0, {n_symbols})"
        )
    return out


def forward_backward(model: Hmm, obs) -> TrellisResult:
    """Run the scaled forward and backward recursions.

    Parameters
    ----------
    model : the HMM to evaluate under.
    obs : symbol sequence; every index must be < ``model.n_symbols``.

    Returns the per-step normalized forward and backward variables, the
    normalizers and the exact log likelihood of the sequence.  Raises
    :class:`InferenceError` if some step has zero total probability (only
    possible when the model contains exact zeros).
    """
    o = as_observations(obs, model.n_symbols)
    t_len, n = o.size, model.n_states
    emit = model.emission[:, o]  # (N, T)
    trans = model.transition

    alpha = np.empty((t_len, n))
    beta = np.empty((t_len, n))
    scale = np.empty(t_len)

    row = model.initial * emit[:, 0]
    total = row.sum()
    if total <= 0.0:
        raise InferenceError("zero total forward probability at step 0")
    scale[0] = 1.0 / total
    alpha[0] = row * scale[0]
    for t in range(1, t_len):
        row = (alpha[t - 1] @ trans) * emit[:, t]
        total = row.sum()
        if total <= 0.0:
            raise InferenceError(f"zero total forward probability at step {t}")
        scale[t] = 1.0 / total
        alpha[t] = row * scale[t]

    beta[t_len - 1] = scale[t_len - 1]
    for t in range(t_len - 2, -1, -1):
        beta[t] = scale[t] * (trans @ (emit[:, t + 1] * beta[t + 1]))

    log_likelihood = float(-np.log(scale).sum())
    return TrellisResult(
        scaled_alpha=_frozen_array(alpha),
        scaled_beta=_frozen_array(beta),
        scale_factors=_frozen_array(scale),
        log_likelihood=log_likelihood,
    )


def posteriors(model: Hmm, obs, trellis: TrellisResult) -> Posteriors:
    """Combine a trellis into state and state-pair posteriors.

    The scale factors cancel, so the results equal the unscaled posterior
    definitions exactly.  The trellis must come from ``forward_backward``
    on the same model and observations.
    """
    o = as_observations(obs, model.n_symbols)
    t_len, n = o.size, model.n_states
    if trellis.scaled_alpha.shape != (t_len, n):
        raise DomainError(
            f"trellis shape {trellis.scaled_alpha.shape} does not match "
            f"{t_len} observations and {n} states"
        )

    joint = trellis.scaled_alpha * trellis.scaled_beta
    gamma = joint / joint.sum(axis=1, keepdims=True)

    if t_len == 1:
        xi = np.zeros((0, n, n))
    else:
        weighted = model.emission[:, o[1:]].T * trellis.scaled_beta[1:]  # (T-1, N)
        xi = (
            trellis.scaled_alpha[:-1, :, None]
            * model.transition[None, :, :]
            * weighted[:, None, :]
        )
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return Posteriors(gamma=_frozen_array(gamma), xi=_frozen_array(xi))


def total_log_likelihood(model: Hmm, sequences: Sequence) -> float:
    """Sum of per-sequence log likelihoods under ``model``."""
    return float(sum(forward_backward(model, s).log_likelihood for s in sequences))


def _floor_rows(rows: np.ndarray, floor: float) -> np.ndarray:
    """Renormalize rows to sum to one with every entry at least ``floor``."""
    out = np.array(rows, dtype=float)
    sums = out.sum(axis=1, keepdims=True)
    dead = sums[:, 0] <= 0.0
    if dead.any():
        out[dead] = 1.0 / out.shape[1]
        sums = out.sum(axis=1, keepdims=True)
    out /= sums
    if floor <= 0.0:
        return out
    if floor * out.shape[1] >= 1.0:
        raise DomainError("smoothing floor too large for the alphabet size")
    for row in out:
        # Pin sub-floor entries and rescale the rest; repeat in case the
        # rescaling pushed a borderline entry under the floor.
        while True:
            low = row < floor
            if not low.any():
                break
            high = ~low
            row[low] = floor
            row[high] *= (1.0 - floor * low.sum()) / row[high].sum()
    return out


@dataclass
class _EStats:
    trans_num: np.ndarray
    trans_den: np.ndarray
    emit_num: np.ndarray
    emit_den: np.ndarray
    initial_sum: np.ndarray
    n_sequences: int


def _expectation(model: Hmm, seqs: list[np.ndarray]) -> tuple[_EStats, float]:
    n, m = model.n_states, model.n_symbols
    trans_num = np.zeros((n, n))
    trans_den = np.zeros(n)
    emit_by_symbol = np.zeros((m, n))
    emit_den = np.zeros(n)
    initial_sum = np.zeros(n)
    total = 0.0
    # Accumulation order is fixed: sequences in list order, time within.
    for o in seqs:
        trellis = forward_backward(model, o)
        post = posteriors(model, o, trellis)
        total += trellis.log_likelihood
        if o.size >= 2:
            trans_num += post.xi.sum(axis=0)
            trans_den += post.gamma[:-1].sum(axis=0)
        np.add.at(emit_by_symbol, o, post.gamma)
        emit_den += post.gamma.sum(axis=0)
        initial_sum += post.gamma[0]
    stats = _EStats(trans_num, trans_den, emit_by_symbol.T, emit_den, initial_sum, len(seqs))
    return stats, total


def _maximization(model: Hmm, stats: _EStats, config: FitConfig) -> Hmm:
    new_initial = stats.initial_sum / stats.n_sequences
    new_initial = new_initial / new_initial.sum()

    if config.update_transitions:
        trans = np.array(model.transition)
        visited = stats.trans_den > 0.0
        trans[visited] = stats.trans_num[visited] / stats.trans_den[visited, None]
        trans = _floor_rows(trans, config.emission_floor)
    else:
        trans = model.transition

    emit = np.array(model.emission)
    seen = stats.emit_den > 0.0
    emit[seen] = stats.emit_num[seen] / stats.emit_den[seen, None]
    emit = _floor_rows(emit, config.emission_floor)

    return Hmm(trans, emit, new_initial)


def fit(
    initial_model: Hmm,
    sequences: Sequence,
    config: FitConfig | None = None,
    *,
    on_iteration: Callable[[int, Hmm, float], None] | None = None,
) -> tuple[Hmm, np.ndarray]:
    """Baum-Welch training pooled over multiple observation sequences.

    Numerator and denominator sums of the transition and emission updates
    are pooled across sequences before dividing; the initial distribution
    is the average of the per-sequence first-step posteriors.  After every
    M-step, emission and transition rows are floored at
    ``config.emission_floor`` and renormalized.  Sequences of length one
    contribute to the initial-state and emission updates only.

    Parameters
    ----------
    initial_model : starting point; also supplies N and M.
    sequences : non-empty list of symbol sequences.
    config : see :class:`FitConfig`; defaults apply when omitted.
    on_iteration : optional callback ``(iteration, model, log_likelihood)``
        invoked once per iteration with the model being evaluated.

    Returns
    -------
    (model, trace) where ``trace[k]`` is the total log likelihood of the
    model after ``k`` EM updates.  The trace is non-decreasing up to tiny
    floating-point slack and always ends at the returned model.  Training
    stops once the relative improvement drops below ``config.rel_tol`` or
    after ``config.max_iterations`` updates.
    """
    if config is None:
        config = FitConfig()
    model = initial_model
    seqs = [as_observations(s, model.n_symbols) for s in sequences]
    if not seqs:
        raise DomainError("fit requires at least one observation sequence")

    trace: list[float] = []
    for iteration in range(config.max_iterations):
        stats, log_likelihood = _expectation(model, seqs)
        trace.append(log_likelihood)
        if on_iteration is not None:
            on_iteration(iteration, model, log_likelihood)
        if iteration > 0:
            previous = trace[-2]
            floor = max(abs(previous), np.finfo(float).tiny)
            if log_likelihood - previous < config.rel_tol * floor:
                break
        model = _maximization(model, stats, config)
    else:
        # Budget exhausted: evaluate once more so the trace ends at the
        # returned model.
        log_likelihood = total_log_likelihood(model, seqs)
        trace.append(log_likelihood)
        if on_iteration is not None:
            on_iteration(config.max_iterations, model, log_likelihood)
    return model, np.asarray(trace)


def viterbi(model: Hmm, obs) -> StatePath:
    """Most probable state path for ``obs``, computed in log space.

    Ties in every maximization resolve toward the lowest state index.
    Raises :class:`InferenceError` when no state can produce the observed
    symbol at some step (possible only for models with exact zeros).
    """
    o = as_observations(obs, model.n_symbols)
    t_len, n = o.size, model.n_states
    with np.errstate(divide="ignore"):
        log_trans = np.log(model.transition)
        log_emit = np.log(model.emission)
        log_initial = np.log(model.initial)

    delta = log_initial + log_emit[:, o[0]]
    if np.isneginf(delta).all():
        raise InferenceError("no state can produce the observation at step 0")
    back = np.zeros((t_len, n), dtype=np.int64)
    for t in range(1, t_len):
        cand = delta[:, None] + log_trans
        best_prev = np.argmax(cand, axis=0)  # ties -> lowest predecessor index
        delta = cand[best_prev, np.arange(n)] + log_emit[:, o[t]]
        back[t] = best_prev
        if np.isneginf(delta).all():
            raise InferenceError(f"no admissible state path at step {t}")

    last = int(np.argmax(delta))
    states = np.empty(t_len, dtype=np.int64)
    states[-1] = last
    for t in range(t_len - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return StatePath(states=_frozen_array(states, dtype=np.int64), log_prob=float(delta[last]))


def k_best_paths(model: Hmm, obs, k: int) -> list[StatePath]:
    """The ``k`` highest-probability state paths, best first (list Viterbi).

    Every (time, state) cell keeps its ``k`` best predecessor entries, so
    the result is exact.  Paths are distinct and ordered by non-increasing
    log probability; exact ties are ordered by trailing state indices,
    matching the lowest-index tie rule of :func:`viterbi`, so the first
    path always equals the Viterbi path.  If fewer than ``k`` distinct
    paths exist, all of them are returned.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    o = as_observations(obs, model.n_symbols)
    t_len, n = o.size, model.n_states
    with np.errstate(divide="ignore"):
        log_trans = np.log(model.transition)
        log_emit = np.log(model.emission)
        log_initial = np.log(model.initial)

    # Cell entries are (score, previous state, previous rank).
    first = [[(log_initial[j] + log_emit[j, o[0]], -1, -1)] for j in range(n)]
    if all(np.isneginf(cell[0][0]) for cell in first):
        raise InferenceError("no state can produce the observation at step 0")
    history = [first]
    for t in range(1, t_len):
        prev_cells = history[-1]
        new_cells = []
        for j in range(n):
            bonus = log_emit[j, o[t]]
            cands = []
            for i in range(n):
                hop = log_trans[i, j]
                for rank, entry in enumerate(prev_cells[i]):
                    cands.append((entry[0] + hop + bonus, i, rank))
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            new_cells.append(cands[:k])
        if all(np.isneginf(cell[0][0]) for cell in new_cells):
            raise InferenceError(f"no admissible state path at step {t}")
        history.append(new_cells)

    candidates: list[tuple[float, tuple[int, ...]]] = []
    for j, cell in enumerate(history[-1]):
        for rank in range(len(cell)):
            states = np.empty(t_len, dtype=np.int64)
            state, r = j, rank
            for t in range(t_len - 1, 0, -1):
                states[t] = state
                _, state, r = history[t][state][r]
            states[0] = state
            candidates.append((float(cell[rank][0]), tuple(int(s) for s in states)))
    # Canonical order: descending score, exact ties by trailing states.
    candidates.sort(key=lambda c: (-c[0], c[1][::-1]))

    paths: list[StatePath] = []
    seen: set[tuple[int, ...]] = set()
    for score, states in candidates:
        if states in seen:  # cannot happen for list Viterbi, kept as a guard
            continue
        seen.add(states)
        paths.append(
            StatePath(states=_frozen_array(states, dtype=np.int64), log_prob=score)
        )
        if len(paths) == k:
            break
    return paths


def random_model(n_states: int, n_symbols: int, seed: int = 0) -> Hmm:
    """A random valid model with Dirichlet(1) rows; useful for tests."""
    if n_states < 1 or n_symbols < 1:
        raise DomainError("n_states and n_symbols must be positive")
    rng = np.random.default_rng(seed)
    return Hmm(
        transition=rng.dirichlet(np.ones(n_states), size=n_states),
        emission=rng.dirichlet(np.ones(n_symbols), size=n_states),
        initial=rng.dirichlet(np.ones(n_states)),
    )


def hmm_to_dict(model: Hmm) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "n_states": model.n_states,
        "n_symbols": model.n_symbols,
        "transition": [list(row) for row in model.transition],
        "emission": [list(row) for row in model.emission],
        "initial": list(model.initial),
    }


def hmm_from_dict(payload: dict) -> Hmm:
    if not isinstance(payload, dict):
        raise ModelFormatError("model document must be a JSON object")
    for key in ("format_version", "n_states", "n_symbols", "transition", "emission", "initial"):
        if key not in payload:
            raise ModelFormatError(f"model document is missing the '{key}' field")
    if payload["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format_version {payload['format_version']!r}"
        )
    try:
        model = Hmm(
            transition=np.asarray(payload["transition"], dtype=float),
            emission=np.asarray(payload["emission"], dtype=float),
            initial=np.asarray(payload["initial"], dtype=float),
        )
    except (DomainError, ValueError) as exc:
        raise ModelFormatError(f"model arrays are invalid: {exc}") from exc
    if model.n_states != payload["n_states"] or model.n_symbols != payload["n_symbols"]:
        raise ModelFormatError("declared n_states/n_symbols do not match the stored arrays")
    return model


def save_hmm(model: Hmm, path) -> None:
    Path(path).write_text(json.dumps(hmm_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_hmm(path) -> Hmm:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return hmm_from_dict(payload)
