"""Fully connected HMM with factorized categorical emissions.

Each time step emits a tuple of F discrete symbols. Given the hidden state,
the F symbols are independent, each drawn from its own per-state categorical
distribution, so the emission probability of a tuple is the product of F
per-feature probabilities.

Likelihoods use the scaled forward recursion, with an additional per-step
shift of the log emission (the max over states) so that tuples with many
improbable symbols cannot underflow a single step.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MODEL_FORMAT = "inclusion-guard/hmm"
MODEL_VERSION = 1


class HmmError(ValueError):
    pass


class InvalidConfig(HmmError):
    pass


class SymbolOutOfRange(HmmError):
    pass


class EmptyDataset(HmmError):
    pass


class InvalidLength(HmmError):
    pass


class ModelFormatError(HmmError):
    pass


@dataclass(frozen=True)
class HmmConfig:
    feature_arities: tuple[int, ...]
    num_states: int = 20
    max_iterations: int = 200
    log_likelihood_tolerance: float = 1e-4
    smoothing_alpha: float = 0.01
    seed: int = 0
    restarts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "feature_arities", tuple(int(a) for a in self.feature_arities))
        if self.num_states < 1:
            raise InvalidConfig(f"num_states must be >= 1, got {self.num_states}")
        if not self.feature_arities:
            raise InvalidConfig("at least one feature is required")
        if any(a < 1 for a in self.feature_arities):
            raise InvalidConfig(f"feature arities must be positive: {self.feature_arities}")
        if self.log_likelihood_tolerance <= 0:
            raise InvalidConfig("log_likelihood_tolerance must be > 0")
        if self.smoothing_alpha < 0:
            raise InvalidConfig("smoothing_alpha must be >= 0")
        if self.max_iterations < 0 or self.restarts < 1:
            raise InvalidConfig("max_iterations must be >= 0 and restarts >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must fit in 64 bits")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_arities"] = list(self.feature_arities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HmmConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


_LOG_ZERO = -1e300


def _safe_log(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


class CategoricalHmm:
    """Immutable model parameters plus cached log-space views."""

    def __init__(self, initial, transition, emissions: Sequence, config: HmmConfig | None = None):
        self.initial = _frozen(initial)
        self.transition = _frozen(transition)
        self.emissions = tuple(_frozen(b) for b in emissions)
        n = len(self.initial)
        if self.transition.shape != (n, n):
            raise HmmError(f"transition must be {n}x{n}, got {self.transition.shape}")
        for b in self.emissions:
            if b.ndim != 2 or b.shape[0] != n:
                raise HmmError(f"emission matrix has shape {b.shape}, expected ({n}, K)")
        self.arities = tuple(b.shape[1] for b in self.emissions)
        if config is None:
            config = HmmConfig(feature_arities=self.arities, num_states=n)
        self.config = config

        self.offsets = np.concatenate([[0], np.cumsum(self.arities)[:-1]]).astype(np.int64)
        self.log_initial = _safe_log(self.initial)
        self.log_transition = _safe_log(self.transition)
        self.log_emission_cat = np.ascontiguousarray(_safe_log(np.hstack(self.emissions)))
        # Symbol-major copy: one contiguous row per (feature, symbol) for single-step lookups.
        self._log_emission_rows = np.ascontiguousarray(self.log_emission_cat.T)
        # Finite stand-in for log 0 so indicator-matrix products never meet 0 * -inf.
        self._log_emission_rows_finite = np.maximum(self._log_emission_rows, _LOG_ZERO)

    @property
    def num_states(self) -> int:
        return len(self.initial)

    @property
    def num_features(self) -> int:
        return len(self.emissions)

    def check_stochastic(self, atol: float = 1e-12) -> None:
        rows = [self.initial[None, :], self.transition, *self.emissions]
        for r in rows:
            if (r < 0).any() or not np.allclose(r.sum(axis=1), 1.0, rtol=0, atol=atol):
                raise HmmError("parameters are not row-stochastic")

    def check_symbols(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.ndim == 1 and self.num_features == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise SymbolOutOfRange(f"expected (length, {self.num_features}) symbols, got shape {x.shape}")
        if len(x) == 0:
            raise InvalidLength("observation sequence is empty")
        if (x < 0).any() or (x >= np.asarray(self.arities)).any():
            raise SymbolOutOfRange("symbol outside its feature alphabet")
        return x

    def log_emission(self, x: np.ndarray) -> np.ndarray:
        """Per-step log emission probability for every state, shape (T, N)."""
        return self.log_emission_cat[:, x + self.offsets].sum(axis=-1).T

    def permuted(self, perm: Sequence[int]) -> "CategoricalHmm":
        """The same model with hidden states relabeled."""
        p = np.asarray(perm)
        return CategoricalHmm(self.initial[p], self.transition[np.ix_(p, p)],
                              [b[p] for b in self.emissions], self.config)

    def to_dict(self) -> dict:
        body = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": self.config.to_dict(),
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "emissions": [b.tolist() for b in self.emissions],
        }
        body["digest"] = _digest(body)
        return body

    @classmethod
    def from_dict(cls, d: dict, expected_arities: Sequence[int] | None = None) -> "CategoricalHmm":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"not a model document (format={d.get('format')!r})")
        body = {k: v for k, v in d.items() if k != "digest"}
        if d.get("digest") != _digest(body):
            raise ModelFormatError("model digest mismatch: file is corrupted or edited")
        model = cls(d["initial"], d["transition"], d["emissions"], HmmConfig.from_dict(d["config"]))
        if expected_arities is not None and tuple(expected_arities) != model.arities:
            raise ModelFormatError(
                f"model feature arities {model.arities} do not match extractor {tuple(expected_arities)}")
        model.check_stochastic(atol=1e-9)
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CategoricalHmm):
            return NotImplemented
        return (np.array_equal(self.initial, other.initial)
                and np.array_equal(self.transition, other.transition)
                and len(self.emissions) == len(other.emissions)
                and all(np.array_equal(a, b) for a, b in zip(self.emissions, other.emissions)))

    __hash__ = None


def _digest(body: dict) -> str:
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canon.encode()).hexdigest()


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    a = a / a.sum(axis=-1, keepdims=True)
    # One more pass pulls row sums to within an ulp or two of 1.
    return a / a.sum(axis=-1, keepdims=True)


def init_model(config: HmmConfig) -> CategoricalHmm:
    """Random model with every row drawn from a symmetric Dirichlet(1)."""
    rng = np.random.default_rng(config.seed)
    n = config.num_states
    initial = _normalize_rows(rng.dirichlet(np.ones(n)))
    transition = _normalize_rows(rng.dirichlet(np.ones(n), size=n))
    emissions = [_normalize_rows(rng.dirichlet(np.ones(k), size=n)) for k in config.feature_arities]
    return CategoricalHmm(initial, transition, emissions, config)


def _scaled_emission(model: CategoricalHmm, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    le = model.log_emission(x)
    shift = le.max(axis=1)
    with np.errstate(invalid="ignore"):
        e = np.exp(le - shift[:, None])
    return e, shift


def log_likelihood_forward(model: CategoricalHmm, obs) -> float:
    x = model.check_symbols(getattr(obs, "symbols", obs))
    e, shift = _scaled_emission(model, x)
    if not np.isfinite(shift).all():
        return float("-inf")
    a = model.initial * e[0]
    total = 0.0
    for t in range(len(x)):
        if t:
            a = (a @ model.transition) * e[t]
        c = a.sum()
        if c <= 0.0:
            return float("-inf")
        a = a / c
        total += np.log(c) + shift[t]
    return float(total)


def log_likelihood_backward(model: CategoricalHmm, obs) -> float:
    x = model.check_symbols(getattr(obs, "symbols", obs))
    e, shift = _scaled_emission(model, x)
    if not np.isfinite(shift).all():
        return float("-inf")
    b = np.ones(model.num_states)
    total = 0.0
    for t in range(len(x) - 1, 0, -1):
        b = model.transition @ (e[t] * b)
        d = b.sum()
        if d <= 0.0:
            return float("-inf")
        b = b / d
        total += np.log(d) + shift[t]
    p = float(np.dot(model.initial * e[0], b))
    if p <= 0.0:
        return float("-inf")
    return float(total + np.log(p) + shift[0])


def forward_step(model: CategoricalHmm, state: tuple[np.ndarray, float] | None,
                 row: np.ndarray) -> tuple[np.ndarray, float]:
    """Advance a forward pass by one tuple; ``state`` is (scaled alpha, log-likelihood so far)."""
    le = model._log_emission_rows[np.asarray(row) + model.offsets].sum(axis=0)
    shift = le.max()
    if shift == -math.inf:
        return np.zeros(model.num_states), -math.inf
    if state is None:
        a = model.initial * np.exp(le - shift)
        ll = 0.0
    else:
        a, ll = state
        if ll == -math.inf:
            return a, ll
        a = (a @ model.transition) * np.exp(le - shift)
    c = a.sum()
    if not c > 0.0:
        return a, -math.inf
    return a / c, ll + math.log(c) + float(shift)


def group_by_length(seqs: Sequence[np.ndarray]) -> dict[int, np.ndarray]:
    """Indices of sequences grouped by length, lengths ascending."""
    groups: dict[int, list[int]] = defaultdict(list)
    for i, x in enumerate(seqs):
        groups[len(x)].append(i)
    return {k: np.asarray(groups[k]) for k in sorted(groups)}


def _batch_forward(model: CategoricalHmm, X: np.ndarray, one_hot: np.ndarray | None = None):
    """Scaled forward over a (S, T, F) batch of equal-length sequences.

    Returns time-major alpha and emission terms (T, S, N), scales (T, S) and
    per-sequence log-likelihoods (S,).
    """
    S, T, _ = X.shape
    if one_hot is not None:
        le = (one_hot @ model._log_emission_rows_finite).reshape(T, S, -1)
        le[le < 0.5 * _LOG_ZERO] = -np.inf
    else:
        rows = model._log_emission_rows
        idx = (X + model.offsets).transpose(1, 0, 2)
        le = rows[idx[..., 0]]
        for f in range(1, idx.shape[2]):
            le += rows[idx[..., f]]
    shift = le.max(axis=2)
    alpha = np.empty((T, S, model.num_states))
    scale = np.empty((T, S))
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.exp(le - shift[..., None])
        a = model.initial * e[0]
        for t in range(T):
            if t:
                a = (a @ model.transition) * e[t]
            c = a.sum(axis=1)
            scale[t] = c
            a = a / c[:, None]
            alpha[t] = a
        ll = np.log(scale).sum(axis=0) + shift.sum(axis=0)
    ll[~np.isfinite(ll)] = -np.inf
    return alpha, scale, e, ll


def log_likelihood_many(model: CategoricalHmm, seqs: Sequence) -> np.ndarray:
    """Forward log-likelihoods for many sequences, batched by length."""
    xs = [model.check_symbols(getattr(s, "symbols", s)) for s in seqs]
    out = np.empty(len(xs))
    for length, idx in group_by_length(xs).items():
        X = np.stack([xs[i] for i in idx])
        out[idx] = _batch_forward(model, X)[3]
    return out


@dataclass
class _Counts:
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray  # (N, sum of arities)
    log_likelihood: float = 0.0

    def __iadd__(self, other: "_Counts") -> "_Counts":
        self.initial += other.initial
        self.transition += other.transition
        self.emission += other.emission
        self.log_likelihood += other.log_likelihood
        return self


def _one_hot(model: CategoricalHmm, X: np.ndarray) -> np.ndarray:
    """Time-major (T*S, sum of arities) indicator matrix of the symbols in a batch."""
    S, T, F = X.shape
    out = np.zeros((S * T, int(model.log_emission_cat.shape[1])))
    flat = (X + model.offsets).transpose(1, 0, 2).reshape(S * T, F)
    out[np.arange(S * T)[:, None], flat] = 1.0
    return out


def _expected_counts(model: CategoricalHmm, X: np.ndarray, one_hot: np.ndarray | None = None) -> _Counts:
    """E-step sufficient statistics for a batch of equal-length sequences."""
    S, T, F = X.shape
    N = model.num_states
    if one_hot is None:
        one_hot = _one_hot(model, X)
    alpha, scale, e, ll = _batch_forward(model, X, one_hot)
    if not np.isfinite(ll).all():
        raise HmmError("a training sequence has zero probability under the current model")
    beta = np.empty_like(alpha)
    beta[-1] = 1.0
    trans_t = model.transition.T
    for t in range(T - 2, -1, -1):
        beta[t] = ((e[t + 1] * beta[t + 1]) @ trans_t) / scale[t + 1, :, None]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)

    if T > 1:
        nxt = e[1:] * beta[1:] / scale[1:, :, None]
        xi = (alpha[:-1].reshape(-1, N).T @ nxt.reshape(-1, N)) * model.transition
    else:
        xi = np.zeros((N, N))

    emission = gamma.reshape(T * S, N).T @ one_hot
    return _Counts(gamma[0].sum(axis=0), xi, emission, float(ll.sum()))


def _e_step(model: CategoricalHmm, groups: list[tuple[np.ndarray, np.ndarray]]) -> _Counts:
    N = model.num_states
    acc = _Counts(np.zeros(N), np.zeros((N, N)), np.zeros((N, model.log_emission_cat.shape[1])))
    for X, one_hot in groups:
        acc += _expected_counts(model, X, one_hot)
    return acc


def _reestimate(counts: np.ndarray, previous: np.ndarray, alpha: float) -> np.ndarray:
    counts = counts + alpha
    # A state never visited has no counts; its old row is as good as any.
    empty = counts.sum(axis=-1, keepdims=True) <= 0.0
    return _normalize_rows(np.where(empty, previous, counts))


def _m_step(model: CategoricalHmm, counts: _Counts, alpha: float = 0.0) -> CategoricalHmm:
    initial = _reestimate(counts.initial, model.initial, alpha)
    transition = _reestimate(counts.transition, model.transition, alpha)
    emissions = [_reestimate(counts.emission[:, off:off + k], b, alpha)
                 for off, k, b in zip(model.offsets, model.arities, model.emissions)]
    return CategoricalHmm(initial, transition, emissions, model.config)


@dataclass
class TrainTrace:
    log_likelihoods: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def max_decrease(self) -> float:
        ll = np.asarray(self.log_likelihoods)
        if len(ll) < 2:
            return 0.0
        return float(max(0.0, -(np.diff(ll).min())))


def _prepare(model: CategoricalHmm, dataset: Iterable) -> list[tuple[np.ndarray, np.ndarray]]:
    xs = [model.check_symbols(getattr(s, "symbols", s)) for s in dataset]
    if not xs:
        raise EmptyDataset("cannot train on an empty dataset")
    groups = [np.stack([xs[i] for i in idx]) for idx in group_by_length(xs).values()]
    return [(X, _one_hot(model, X)) for X in groups]


def train_baum_welch(model: CategoricalHmm, dataset: Iterable,
                     config: HmmConfig | None = None) -> tuple[CategoricalHmm, TrainTrace]:
    """Baum-Welch from ``model``; stops when the total log-likelihood changes by < tolerance.

    Iterations are plain maximum-likelihood EM, so the traced log-likelihood
    never decreases. Pseudo-counts are added only in the final re-estimation,
    which keeps unseen symbols at a small non-zero probability for scoring.
    """
    config = config or model.config
    groups = _prepare(model, dataset)
    trace = TrainTrace()
    current = model
    for it in range(config.max_iterations + 1):
        counts = _e_step(current, groups)
        trace.log_likelihoods.append(counts.log_likelihood)
        trace.iterations = it
        if it and abs(trace.log_likelihoods[-1] - trace.log_likelihoods[-2]) < config.log_likelihood_tolerance:
            trace.converged = True
            break
        if it == config.max_iterations:
            break
        current = _m_step(current, counts)
    log.debug("baum-welch: %d iterations, LL %.6f, converged=%s",
              trace.iterations, trace.log_likelihoods[-1], trace.converged)
    return _m_step(current, counts, config.smoothing_alpha), trace


def fit(dataset: Sequence, config: HmmConfig) -> tuple[CategoricalHmm, TrainTrace]:
    """Seeded training with optional restarts, keeping the best final log-likelihood."""
    best = None
    for r in range(config.restarts):
        cfg = config if r == 0 else HmmConfig(**{**config.to_dict(), "seed": (config.seed + r) % 2**64})
        model, trace = train_baum_welch(init_model(cfg), dataset, cfg)
        if best is None or trace.log_likelihoods[-1] > best[1].log_likelihoods[-1]:
            best = (model, trace)
    model, trace = best
    # Record the caller's config so files are reproducible from it.
    return CategoricalHmm(model.initial, model.transition, model.emissions, config), trace


def _draw(rng: np.random.Generator, cum: np.ndarray) -> np.ndarray:
    """Categorical draws, one per row of a cumulative-probability matrix."""
    u = rng.random(len(cum))
    return np.minimum((u[:, None] > cum).sum(axis=1), cum.shape[1] - 1)


def sample_batch(model: CategoricalHmm, count: int, length: int, seed: int | np.random.Generator) -> np.ndarray:
    """``count`` sequences of ``length`` tuples by ancestral sampling, shape (count, length, F)."""
    if length < 1:
        raise InvalidLength(f"length must be >= 1, got {length}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cum_pi = np.cumsum(model.initial)
    cum_a = np.cumsum(model.transition, axis=1)
    cum_b = [np.cumsum(b, axis=1) for b in model.emissions]
    out = np.empty((count, length, model.num_features), dtype=np.int64)
    states = _draw(rng, np.broadcast_to(cum_pi, (count, len(cum_pi))))
    for t in range(length):
        if t:
            states = _draw(rng, cum_a[states])
        for f, cb in enumerate(cum_b):
            out[:, t, f] = _draw(rng, cb[states])
    return out


def sample(model: CategoricalHmm, length: int, seed: int) -> np.ndarray:
    return sample_batch(model, 1, length, seed)[0]
