"""Softmax sequence policies over a small token vocabulary.

Parameters are stored as sparse *rows*: a row is a logit vector of length
``vocab_size`` addressed by a row key. A context activates one or more rows
with real weights and its logits are the weighted row sum.

* tabular: the row key is the :class:`ContextKey` itself (weight 1).
* linear: the row key is a hashed feature index; the featurizer maps
  ``(prompt_id, last n tokens)`` to a handful of indicator features.

Rows that were never written read as zeros, so an unseen tabular context is
the uniform policy. Gradients use the same sparse layout
(``dict[row_key, ndarray]``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from uecrl.errors import CorruptState, InvalidArgument
from uecrl.seeding import stable_hash

Gradient = dict


class ContextKey(NamedTuple):
    prompt_id: str
    prefix: tuple = ()


_FEATURIZER_RE = re.compile(r"^ngram(\d+)-(\d+)$")
DEFAULT_FEATURIZER = "ngram2-256"


def parse_featurizer(featurizer_id: str) -> tuple[int, int]:
    """Return ``(n, n_features)`` for an id such as ``ngram2-256``."""
    m = _FEATURIZER_RE.match(featurizer_id or "")
    if not m:
        raise InvalidArgument(f"unknown featurizer id {featurizer_id!r}")
    n, n_features = int(m.group(1)), int(m.group(2))
    if n_features < 1:
        raise InvalidArgument("featurizer needs at least one feature")
    return n, n_features


def hashed_features(featurizer_id: str, ctx: ContextKey) -> list[tuple[int, float]]:
    """Indicator features for the prompt and each of its last 1..n token suffixes."""
    n, n_features = parse_featurizer(featurizer_id)
    feats = []
    for j in range(n + 1):
        if j > len(ctx.prefix):
            break
        suffix = tuple(ctx.prefix[len(ctx.prefix) - j:]) if j else ()
        feats.append((stable_hash("feat", j, ctx.prompt_id, suffix) % n_features, 1.0))
    return feats


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


@dataclass
class PolicyParams:
    kind: str
    vocab_size: int
    rows: dict = field(default_factory=dict)
    featurizer_id: str | None = None
    frozen: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("tabular", "linear"):
            raise InvalidArgument(f"unknown policy kind {self.kind!r}")
        if self.vocab_size < 2:
            raise InvalidArgument("vocab_size must be >= 2")
        if self.kind == "linear":
            parse_featurizer(self.featurizer_id)
        for key, row in self.rows.items():
            if row.flags.writeable:
                self._store(key, np.array(row, dtype=float))

    @classmethod
    def tabular(cls, vocab_size: int) -> "PolicyParams":
        return cls("tabular", vocab_size)

    @classmethod
    def linear(cls, vocab_size: int, featurizer_id: str = DEFAULT_FEATURIZER) -> "PolicyParams":
        return cls("linear", vocab_size, featurizer_id=featurizer_id)

    def active_rows(self, ctx: ContextKey) -> list[tuple[Hashable, float]]:
        if self.kind == "tabular":
            return [(ctx, 1.0)]
        return hashed_features(self.featurizer_id, ctx)

    def logits(self, ctx: ContextKey) -> np.ndarray:
        z = np.zeros(self.vocab_size)
        for key, weight in self.active_rows(ctx):
            row = self.rows.get(key)
            if row is not None:
                z = z + weight * row
        return z

    def set_row(self, key: Hashable, values) -> None:
        if self.frozen:
            raise InvalidArgument("cannot mutate a frozen snapshot")
        values = np.array(values, dtype=float)
        if values.shape != (self.vocab_size,):
            raise InvalidArgument(f"row must have length {self.vocab_size}")
        self._store(key, values)

    def _store(self, key: Hashable, values: np.ndarray) -> None:
        # Stored rows are read-only and replaced, never edited, so snapshots may share them.
        if not np.isfinite(values).all():
            raise CorruptState(f"non-finite parameters for row {key!r}")
        values.setflags(write=False)
        self.rows[key] = values

    def apply_gradient(self, grad: Gradient, step_size: float) -> None:
        """Ascent step ``theta += step_size * grad``."""
        if self.frozen:
            raise InvalidArgument("cannot mutate a frozen snapshot")
        for key, g in grad.items():
            row = self.rows.get(key)
            self._store(key, (np.zeros(self.vocab_size) if row is None else row) + step_size * g)

    def is_finite(self) -> bool:
        return all(np.isfinite(r).all() for r in self.rows.values())

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.kind, self.vocab_size, dict(self.rows), self.featurizer_id)

    def snapshot(self) -> "PolicyParams":
        """Frozen copy with memoized distributions; later updates to ``self`` do not reach it."""
        return PolicyParams(self.kind, self.vocab_size, dict(self.rows), self.featurizer_id, frozen=True)


def action_distribution(params: PolicyParams, ctx: ContextKey, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    cache_key = (ctx, temperature)
    if params.frozen:
        hit = params._cache.get(cache_key)
        if hit is not None:
            return hit
    z = params.logits(ctx)
    if not np.isfinite(z).all():
        raise CorruptState(f"non-finite logits at {ctx}")
    p = softmax(z / temperature)
    if params.frozen:
        p.setflags(write=False)
        params._cache[cache_key] = p
    return p


def _log_dist(params: PolicyParams, ctx: ContextKey, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    cache_key = ("log", ctx, temperature)
    if params.frozen:
        hit = params._cache.get(cache_key)
        if hit is not None:
            return hit
    z = params.logits(ctx)
    if not np.isfinite(z).all():
        raise CorruptState(f"non-finite logits at {ctx}")
    lp = log_softmax(z / temperature)
    if params.frozen:
        lp.setflags(write=False)
        params._cache[cache_key] = lp
    return lp


def token_logprob(params: PolicyParams, ctx: ContextKey, token: int, temperature: float = 1.0) -> float:
    return float(_log_dist(params, ctx, temperature)[token])


def _nucleus(p: np.ndarray, top_p: float) -> np.ndarray:
    order = np.argsort(-p, kind="stable")
    csum = np.cumsum(p[order])
    keep = int(np.searchsorted(csum, top_p, side="left")) + 1
    q = np.zeros_like(p)
    q[order[:keep]] = p[order[:keep]]
    return q / q.sum()


def sample_sequence(
    params: PolicyParams,
    prompt_id: str,
    temperature: float,
    max_len: int,
    rng: np.random.Generator,
    terminal_token: int | None = None,
    top_p: float = 1.0,
) -> tuple[tuple[int, ...], list[float], list[float]]:
    """Sample one response token by token.

    Returns ``(tokens, logprobs at the sampling distribution, logprobs at
    temperature 1)``. Generation stops after emitting ``terminal_token`` or at
    ``max_len``. With ``top_p < 1`` the behaviour track is the log-probability
    under the truncated, renormalized nucleus.
    """
    if max_len < 1:
        raise InvalidArgument("max_len must be >= 1")
    tokens: list[int] = []
    behavior: list[float] = []
    base: list[float] = []
    for _ in range(max_len):
        ctx = ContextKey(prompt_id, tuple(tokens))
        p = action_distribution(params, ctx, temperature)
        if top_p < 1.0:
            p = _nucleus(p, top_p)
        u = rng.random()
        cdf = np.cumsum(p)
        tok = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), params.vocab_size - 1)
        if top_p < 1.0:
            behavior.append(math.log(p[tok]))
        else:
            behavior.append(token_logprob(params, ctx, tok, temperature))
        base.append(token_logprob(params, ctx, tok, 1.0))
        tokens.append(tok)
        if terminal_token is not None and tok == terminal_token:
            break
    return tuple(tokens), behavior, base


def sequence_logprob(params: PolicyParams, prompt_id: str, tokens: Sequence[int], temperature: float = 1.0) -> float:
    if len(tokens) == 0:
        raise InvalidArgument("tokens must be non-empty")
    total = 0.0
    for t, tok in enumerate(tokens):
        if not 0 <= tok < params.vocab_size:
            raise InvalidArgument(f"token {tok} outside vocabulary of size {params.vocab_size}")
        total += token_logprob(params, ContextKey(prompt_id, tuple(tokens[:t])), tok, temperature)
    return total


def token_entropy(dist) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(dist, dtype=float)
    if (p < 0).any():
        raise InvalidArgument("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgument(f"probabilities sum to {p.sum()}, not 1")
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log(nz)).sum()))


def context_entropy(params: PolicyParams, ctx: ContextKey, temperature: float = 1.0) -> float:
    cache_key = ("H", ctx, temperature)
    if params.frozen:
        hit = params._cache.get(cache_key)
        if hit is not None:
            return hit
    h = token_entropy(action_distribution(params, ctx, temperature))
    if params.frozen:
        params._cache[cache_key] = h
    return h


def accumulate_row(grad: Gradient, params: PolicyParams, ctx: ContextKey, logit_grad: np.ndarray) -> None:
    """Pull a logit-space gradient at ``ctx`` back onto parameter rows of ``grad``."""
    for key, weight in params.active_rows(ctx):
        if key in grad:
            grad[key] = grad[key] + weight * logit_grad
        else:
            grad[key] = weight * logit_grad


def grad_logprob(params: PolicyParams, ctx: ContextKey, token: int) -> Gradient:
    """Gradient of ``log pi(token | ctx)`` at temperature 1."""
    if not 0 <= token < params.vocab_size:
        raise InvalidArgument(f"token {token} outside vocabulary of size {params.vocab_size}")
    row = -np.array(action_distribution(params, ctx, 1.0))
    row[token] += 1.0
    grad: Gradient = {}
    accumulate_row(grad, params, ctx, row)
    return grad


def add_gradients(a: Gradient, b: Gradient, scale: float = 1.0) -> Gradient:
    out = {k: v.copy() for k, v in a.items()}
    for k, v in b.items():
        out[k] = out[k] + scale * v if k in out else scale * v
    return out
