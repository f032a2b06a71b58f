"""Identifier/classifier pair and the differentiable top-k mask sampler.

The identifier scores every subtoken; the sampler turns those scores into a
soft selection mask; the classifier reads only the mask-weighted embeddings.
Training keeps the mask soft so gradients reach the identifier; inference
swaps in an exact hard top-k.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from . import rng as rngmod
from .rationale import word_budget


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.1
    length_level: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.length_level <= 1.0:
            raise ValueError(f"length level must be in (0, 1], got {self.length_level}")


@dataclass(frozen=True)
class MaskSample:
    """One draw from the sampler: a soft mask plus the positions it claimed."""

    mask: np.ndarray
    k: int
    picks: tuple[int, ...]


class Vocabulary:
    """Stable token-to-id map with an unknown-token slot at index 0."""

    UNK = "<unk>"

    def __init__(self, tokens: Sequence[str]):
        if tokens and tokens[0] == self.UNK:
            tokens = tokens[1:]
        self.tokens = [self.UNK] + list(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_datasets(cls, *datasets) -> "Vocabulary":
        seen: set[str] = set()
        for ds in datasets:
            for doc in ds.documents():
                seen.update(doc.subtokens)
        return cls(sorted(seen))

    def encode(self, subtokens: Sequence[str]) -> np.ndarray:
        return np.array([self._index.get(t, 0) for t in subtokens], dtype=np.int64)

    def content_hash(self) -> str:
        payload = "\n".join(self.tokens).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def __len__(self) -> int:
        return len(self.tokens)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
            shape: tuple) -> np.ndarray:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=shape)


class IdentifierNet:
    """Per-subtoken scorer: embedding -> depthwise conv -> 2-layer MLP."""

    def __init__(self, vocab_size: int, embed_dim: int = 24, hidden_dim: int = 24,
                 conv_window: int = 5, dropout_rate: float = 0.1, seed: int = 0):
        if conv_window % 2 != 1:
            raise ValueError("conv window must be odd")
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.conv_window = conv_window
        self.dropout_rate = dropout_rate
        rng = rngmod.generator(seed, "identifier-init")
        conv = rng.normal(0.0, 0.05, size=(conv_window, embed_dim))
        conv[conv_window // 2] += 1.0  # start near an identity filter
        self.params: dict[str, np.ndarray] = {
            "embedding": rng.normal(0.0, 0.3, size=(vocab_size, embed_dim)),
            "conv": conv,
            "w1": _glorot(rng, embed_dim, hidden_dim, (embed_dim, hidden_dim)),
            "b1": np.zeros((1, hidden_dim)),
            "w2": _glorot(rng, hidden_dim, 1, (hidden_dim, 1)),
            "b2": np.zeros((1, 1)),
        }

    def forward(self, lifted: dict[str, dc.Tensor], token_ids: np.ndarray,
                train: bool = False, rng: Optional[np.random.Generator] = None) -> dc.Tensor:
        """Logit column (n, 1) for a token-id sequence."""
        emb = dc.gather(lifted["embedding"], token_ids)
        ctx = dc.conv1d_depthwise(emb, lifted["conv"])
        hidden = dc.relu(dc.add(dc.matmul(ctx, lifted["w1"]), lifted["b1"]))
        hidden = dc.dropout(hidden, self.dropout_rate, rng, train)
        return dc.add(dc.matmul(hidden, lifted["w2"]), lifted["b2"])


class ClassifierNet:
    """Label scorer over mask-weighted embeddings.

    Has its own embedding table unless constructed with ``shared_embedding``;
    pooling divides by max(mask mass, 1e-8), so an all-zero mask yields the
    bias distribution rather than NaNs.
    """

    POOL_FLOOR = 1e-8

    def __init__(self, vocab_size: int, n_labels: int, embed_dim: int = 24,
                 seed: int = 0, shared_embedding: Optional[np.ndarray] = None):
        self.vocab_size = vocab_size
        self.n_labels = n_labels
        self.embed_dim = embed_dim
        rng = rngmod.generator(seed, "classifier-init")
        embedding = (shared_embedding if shared_embedding is not None
                     else rng.normal(0.0, 0.3, size=(vocab_size, embed_dim)))
        self.params: dict[str, np.ndarray] = {
            "embedding": embedding,
            "w": _glorot(rng, embed_dim, n_labels, (embed_dim, n_labels)),
            "b": np.zeros((1, n_labels)),
        }

    def forward(self, lifted: dict[str, dc.Tensor], token_ids: np.ndarray,
                mask_col: dc.Tensor) -> dc.Tensor:
        """Label logits (1, C) given a (n, 1) mask column."""
        tape = mask_col.tape
        emb = dc.gather(lifted["embedding"], token_ids)
        weighted = dc.multiply(mask_col, emb)
        n = len(token_ids)
        summed = dc.matmul(tape.constant(np.ones((1, n))), weighted)
        mass = dc.maximum(dc.tensor_sum(mask_col),
                          tape.constant(np.asarray(self.POOL_FLOOR)))
        pooled = dc.divide(summed, mass)
        return dc.add(dc.matmul(pooled, lifted["w"]), lifted["b"])


def lift_params(tape: dc.Tape, *nets) -> tuple[list[tuple[np.ndarray, dc.Tensor]],
                                               list[dict[str, dc.Tensor]]]:
    """Put each distinct parameter array on the tape exactly once.

    Shared arrays (tied embeddings) become a single leaf, so their gradients
    accumulate across both usages.
    """
    leaves: dict[int, dc.Tensor] = {}
    flat: list[tuple[np.ndarray, dc.Tensor]] = []
    per_net: list[dict[str, dc.Tensor]] = []
    for net in nets:
        lifted = {}
        for name, array in net.params.items():
            key = id(array)
            if key not in leaves:
                leaves[key] = tape.leaf(array)
                flat.append((array, leaves[key]))
            lifted[name] = leaves[key]
        per_net.append(lifted)
    return flat, per_net


# ------------------------------------------------------------------ sampling

def sampler_noise(seed: int, k: int, position_keys: np.ndarray) -> np.ndarray:
    """(k, n) Gumbel noise; entry (j, i) depends only on (seed, j, key_i).

    Because each position's noise is addressed by its key rather than its
    array slot, permuting positions (with their keys) permutes the noise
    identically.
    """
    rows = []
    for j in range(k):
        rows.append(rngmod.counter_gumbel(rngmod.derive(seed, "draw", j), position_keys))
    return np.stack(rows, axis=0)


BLOCK_PENALTY = -1e9


def gumbel_topk_mask_node(logits_col: dc.Tensor, k: int, temperature: float,
                          noise: np.ndarray) -> tuple[dc.Tensor, tuple[int, ...]]:
    """Differentiable top-k selection on the tape.

    Draws k concrete (tempered-softmax) distributions over the positions,
    each perturbed by its own independent Gumbel noise row.  Every draw
    excludes the positions already claimed by earlier draws, so the k peaks
    land on k distinct positions and the elementwise max of the draws sums
    to roughly k at low temperature.  Returns the (n, 1) soft mask and the
    claimed positions in draw order.
    """
    n = logits_col.values.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} positions")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if noise.shape != (k, n):
        raise ValueError(f"noise must be ({k}, {n}), got {noise.shape}")
    tape = logits_col.tape
    row = dc.reshape(logits_col, (1, n))
    inv_t = tape.constant(np.asarray(1.0 / temperature))
    blocked = np.zeros(n, dtype=bool)
    mask_row: Optional[dc.Tensor] = None
    picks: list[int] = []
    for j in range(k):
        penalty = np.where(blocked, BLOCK_PENALTY, 0.0).reshape(1, n)
        scores = dc.add(dc.add(row, tape.constant(noise[j:j + 1])),
                        tape.constant(penalty))
        draw = dc.softmax(dc.multiply(scores, inv_t))
        pick = int(np.argmax(draw.values))
        picks.append(pick)
        blocked[pick] = True
        mask_row = draw if mask_row is None else dc.maximum(mask_row, draw)
    return dc.reshape(mask_row, (n, 1)), tuple(picks)


def gumbel_topk_mask(logits: np.ndarray, config: SamplerConfig,
                     k: Optional[int] = None, seed: Optional[int] = None,
                     position_keys: Optional[np.ndarray] = None) -> MaskSample:
    """Sample a soft mask for a logit vector (NumPy in, NumPy out)."""
    scores = np.asarray(logits, dtype=np.float64).reshape(-1)
    n = scores.size
    if k is None:
        k = word_budget(config.length_level, n)
    keys = np.arange(n, dtype=np.uint64) if position_keys is None \
        else np.asarray(position_keys, dtype=np.uint64)
    if keys.shape != (n,):
        raise ValueError("position keys must match logit count")
    noise = sampler_noise(config.seed if seed is None else seed, k, keys)
    tape = dc.Tape()
    col = tape.leaf(scores.reshape(n, 1), requires_grad=False)
    mask_col, picks = gumbel_topk_mask_node(col, k, config.temperature, noise)
    return MaskSample(mask=mask_col.values.reshape(-1).copy(), k=k, picks=picks)


def hard_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k 0/1 mask; score ties resolve to the lower index."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 1 <= k <= s.size:
        raise ValueError(f"k={k} out of range for {s.size} positions")
    order = np.lexsort((np.arange(s.size), -s))
    mask = np.zeros(s.size, dtype=np.int64)
    mask[order[:k]] = 1
    return mask


# --------------------------------------------------------------- evaluation

def identifier_logits(net: IdentifierNet, token_ids: np.ndarray,
                      train: bool = False,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Deterministic per-subtoken scores (dropout only fires when training)."""
    tape = dc.Tape()
    _, (lifted,) = lift_params(tape, net)
    out = net.forward(lifted, token_ids, train=train, rng=rng)
    return out.values.reshape(-1).copy()


def classify(cls_net: ClassifierNet, token_ids: np.ndarray,
             mask: np.ndarray) -> np.ndarray:
    """Label distribution for a fixed mask (soft or hard)."""
    tape = dc.Tape()
    _, (lifted,) = lift_params(tape, cls_net)
    col = tape.leaf(np.asarray(mask, dtype=np.float64).reshape(-1, 1),
                    requires_grad=False)
    logits = cls_net.forward(lifted, token_ids, col)
    return dc.softmax(logits).values.reshape(-1).copy()
