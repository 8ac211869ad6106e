"""Tabular softmax policies over enumerated contexts.

A policy is a table of per-context logit vectors over a fixed vocabulary of
size V. Distributions are plain numpy arrays of length V. Three instances of
:class:`LogitTable` play the roles of the live policy, the frozen sampling
policy, and the fixed reference policy.

Randomness contract: every sampling function takes a ``numpy.random.Generator``
(PCG64 via ``numpy.random.default_rng``). Sampling is inverse-CDF over the
cumulative distribution, so a fixed seed yields a bit-identical token stream
on any platform.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

# Tokens and contexts are plain non-negative ints; distributions are
# float64 arrays of length V.
VocabId = int
ContextId = int

DIST_ATOL = 1e-9


def softmax(logits: Iterable[float] | np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax (max-subtraction before exp).

    Raises ValueError on non-finite input.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError(f"logits must be a nonempty 1-D sequence, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def check_dist(probs: np.ndarray, atol: float = DIST_ATOL) -> np.ndarray:
    """Validate a probability vector: nonnegative, sums to 1 within atol."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"distribution must be a nonempty 1-D array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("distribution contains non-finite values")
    if np.any(p < 0.0):
        raise ValueError("distribution contains negative probabilities")
    total = p.sum()
    if abs(total - 1.0) > atol:
        raise ValueError(f"distribution sums to {total!r}, expected 1 within {atol}")
    return p


def sample_token(dist: np.ndarray, rng: np.random.Generator) -> VocabId:
    """Draw one token index from ``dist`` via inverse-CDF sampling.

    Zero-probability tokens are never returned; identical generator state
    yields identical draws.
    """
    p = check_dist(dist)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    # Guard against u landing beyond the last cumulative value by round-off.
    return min(idx, p.size - 1)


def entropy(dist: np.ndarray) -> float:
    """Shannon entropy in nats, with 0*log(0) := 0."""
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


class LogitTable:
    """Mutable map from context id to a length-V logit vector.

    Stored vectors are always finite float64 arrays of length ``vocab_size``.
    Insertion order is preserved and defines the deterministic iteration
    order used everywhere (serialization, gradient application).

    Tables are single-writer: frozen snapshots may be shared freely across
    concurrent readers, live tables must not be mutated during shared reads.
    """

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
        self.vocab_size = int(vocab_size)
        self._entries: dict[ContextId, np.ndarray] = {}
        self._frozen = False

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, ctx: ContextId) -> bool:
        return ctx in self._entries

    def contexts(self) -> Iterator[ContextId]:
        return iter(self._entries)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_values(self, values: Iterable[float] | np.ndarray) -> np.ndarray:
        z = np.asarray(values, dtype=np.float64)
        if z.shape != (self.vocab_size,):
            raise ValueError(
                f"logit vector must have shape ({self.vocab_size},), got {z.shape}"
            )
        if not np.all(np.isfinite(z)):
            raise ValueError("logit vector contains non-finite values")
        return z

    def set_logits(self, ctx: ContextId, values: Iterable[float] | np.ndarray) -> None:
        if self._frozen:
            raise ValueError("cannot mutate a frozen snapshot")
        self._entries[int(ctx)] = self._check_values(values).copy()

    def add_to_logits(self, ctx: ContextId, delta: np.ndarray) -> None:
        if self._frozen:
            raise ValueError("cannot mutate a frozen snapshot")
        updated = self._entries[ctx] + self._check_values(delta)
        if not np.all(np.isfinite(updated)):
            raise ValueError(f"logit update at context {ctx} produced non-finite values")
        self._entries[ctx] = updated

    def logits(self, ctx: ContextId) -> np.ndarray:
        view = self._entries[ctx].view()
        view.flags.writeable = False
        return view

    def dist(self, ctx: ContextId) -> np.ndarray:
        return softmax(self._entries[ctx])

    def copy(self) -> "LogitTable":
        out = LogitTable(self.vocab_size)
        for ctx, z in self._entries.items():
            out._entries[ctx] = z.copy()
        return out

    def snapshot(self) -> "LogitTable":
        """Deep immutable copy; later mutation of the source never leaks in."""
        out = self.copy()
        out._frozen = True
        for z in out._entries.values():
            z.flags.writeable = False
        return out


def snapshot(policy: LogitTable) -> LogitTable:
    """Freeze the current state of ``policy`` (see :meth:`LogitTable.snapshot`)."""
    return policy.snapshot()


def dump_logit_table(table: LogitTable) -> str:
    """Serialize to the line format ``V=<int>`` then ``ctx=<id> z=<v0>,<v1>,...``.

    Values use Python's shortest round-trip float repr, which preserves every
    bit on reload (equivalent to 17 significant decimal digits).
    """
    lines = [f"V={table.vocab_size}"]
    for ctx in table.contexts():
        z = table.logits(ctx)
        lines.append(f"ctx={ctx} z=" + ",".join(repr(float(v)) for v in z))
    return "\n".join(lines) + "\n"


def load_logit_table(text: str) -> LogitTable:
    """Parse the :func:`dump_logit_table` format back into a table."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("V="):
        raise ValueError("logit table text must start with a 'V=<int>' header")
    table = LogitTable(int(lines[0][2:]))
    for ln in lines[1:]:
        if not ln.startswith("ctx="):
            raise ValueError(f"malformed logit table line: {ln!r}")
        head, _, tail = ln.partition(" z=")
        ctx = int(head[4:])
        values = [float(v) for v in tail.split(",")]
        table.set_logits(ctx, values)
    return table


def save_logit_table(table: LogitTable, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dump_logit_table(table))


def read_logit_table(path) -> LogitTable:
    with open(path, "r", encoding="ascii") as fh:
        return load_logit_table(fh.read())
