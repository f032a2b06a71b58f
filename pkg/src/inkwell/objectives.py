"""Training objective: task loss plus mask regularizers.

Two parallel surfaces.  The plain functions work on NumPy arrays and define
the reference semantics used by reports and tests; the ``*_node`` variants
build the same quantity on a :mod:`diffcore` tape for training.  The two
must agree to float64 precision — that equality is itself under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc

PROB_FLOOR = 1e-12
IB_CLIP = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights for the regularizers.

    ``continuity`` and ``length_control`` scale the two mask-shape terms;
    ``baseline`` scales whichever sparsity penalty a baseline method uses.
    """

    continuity: float = 0.5
    length_control: float = 0.3
    baseline: float = 1e-4


@dataclass(frozen=True)
class LossBreakdown:
    """Itemized loss; ``total`` is the exact weighted sum of the parts."""

    task: float
    continuity: float
    length_control: float
    baseline_penalty: float
    total: float

    @staticmethod
    def build(task: float, continuity: float, length_control: float,
              baseline_penalty: float, weights: LossWeights) -> "LossBreakdown":
        total = (task
                 + weights.continuity * continuity
                 + weights.length_control * length_control
                 + weights.baseline * baseline_penalty)
        return LossBreakdown(task, continuity, length_control, baseline_penalty, total)


# ------------------------------------------------------------ plain versions

def task_loss(prediction: np.ndarray, gold_index: int) -> float:
    """Negative log-probability of the gold label, floored at 1e-12."""
    p = float(np.asarray(prediction).reshape(-1)[gold_index])
    return -math.log(max(p, PROB_FLOOR))


def fused_lasso(mask: np.ndarray) -> float:
    """Total variation of the mask: sum of |m_i - m_{i-1}| over interior steps.

    A length-n mask contributes n-1 terms; single-token masks cost nothing.
    For binary masks this equals 2 * segments - mask[0] - mask[-1].
    """
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.size < 2:
        return 0.0
    return float(np.abs(np.diff(m)).sum())


def vecsort_ref(n: int, k: int) -> np.ndarray:
    """Sorted target mask: n-k zeros followed by k ones."""
    if not 1 <= k <= n:
        raise ValueError(f"budget {k} out of range for length {n}")
    ref = np.zeros(n)
    ref[n - k:] = 1.0
    return ref


def vecsort_penalty(mask: np.ndarray, k: int) -> float:
    """Squared distance between the ascending-sorted mask and the k-hot target."""
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    diff = np.sort(m) - vecsort_ref(m.size, k)
    return float((diff * diff).sum())


def sparse_n_penalty(mask: np.ndarray) -> float:
    """Plain L1 mass of the mask."""
    return float(np.abs(np.asarray(mask, dtype=np.float64)).sum())


def sparse_c_penalty(mask: np.ndarray, alpha: float) -> float:
    """Hinge on mask density above the target rate ``alpha``."""
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    return float(max(0.0, np.abs(m).sum() / m.size - alpha))


def sparse_ib_kl(p: np.ndarray, prior: float) -> float:
    """Sum of per-token Bernoulli KL(p_i || prior).

    Both posteriors and prior are clipped to [1e-6, 1 - 1e-6] so saturated
    probabilities stay finite.
    """
    q = np.clip(np.asarray(p, dtype=np.float64).reshape(-1), IB_CLIP, 1.0 - IB_CLIP)
    pi = min(max(prior, IB_CLIP), 1.0 - IB_CLIP)
    return float((q * np.log(q / pi) + (1.0 - q) * np.log((1.0 - q) / (1.0 - pi))).sum())


def limitedink_loss(mask: np.ndarray, prediction: np.ndarray, gold_index: int,
                    k: int, weights: LossWeights) -> LossBreakdown:
    """Task loss plus the continuity and length-control regularizers."""
    return LossBreakdown.build(
        task=task_loss(prediction, gold_index),
        continuity=fused_lasso(mask),
        length_control=vecsort_penalty(mask, k),
        baseline_penalty=0.0,
        weights=weights)


# ------------------------------------------------------------- tape versions

def nll_node(log_probs: dc.Tensor, gold_index: int) -> dc.Tensor:
    """-log p[gold] from a (1, C) log-probability row."""
    n_classes = log_probs.values.shape[-1]
    onehot = np.zeros((1, n_classes))
    onehot[0, gold_index] = -1.0
    picked = dc.multiply(log_probs, log_probs.tape.constant(onehot))
    return dc.tensor_sum(picked)


def fused_lasso_node(mask: dc.Tensor) -> dc.Tensor:
    """Tape total variation; ``mask`` is an (n, 1) column."""
    n = mask.values.shape[0]
    tape = mask.tape
    if n < 2:
        return tape.constant(np.zeros(()))
    d = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    d[idx, idx] = -1.0
    d[idx, idx + 1] = 1.0
    return dc.tensor_sum(dc.absolute(dc.matmul(tape.constant(d), mask)))


def vecsort_penalty_node(mask: dc.Tensor, k: int) -> dc.Tensor:
    flat = dc.reshape(mask, (mask.values.size,))
    sorted_m, _ = dc.sort_ascending(flat)
    diff = dc.subtract(sorted_m, mask.tape.constant(vecsort_ref(flat.values.size, k)))
    return dc.tensor_sum(dc.multiply(diff, diff))


def sparse_n_node(mask: dc.Tensor) -> dc.Tensor:
    return dc.tensor_sum(dc.absolute(mask))


def sparse_c_node(mask: dc.Tensor, alpha: float) -> dc.Tensor:
    n = mask.values.size
    tape = mask.tape
    density = dc.multiply(dc.tensor_sum(dc.absolute(mask)),
                          tape.constant(np.asarray(1.0 / n)))
    return dc.relu(dc.subtract(density, tape.constant(np.asarray(alpha))))


def sparse_ib_node(logits: dc.Tensor, prior: float) -> dc.Tensor:
    """KL(sigmoid(logits) || prior) summed over tokens, built from softmax rows.

    Stacking each logit against a zero column turns the Bernoulli posterior
    into a two-way softmax, which keeps the whole expression inside the
    primitive set (no standalone log needed).
    """
    pi = min(max(prior, IB_CLIP), 1.0 - IB_CLIP)
    tape = logits.tape
    col = dc.reshape(logits, (logits.values.size, 1))
    zeros = tape.constant(np.zeros((logits.values.size, 1)))
    two_way = dc.concatenate([col, zeros], axis=1)
    probs = dc.softmax(two_way)
    log_probs = dc.log_softmax(two_way)
    log_prior = tape.constant(np.log(np.array([[pi, 1.0 - pi]])))
    per_cell = dc.multiply(probs, dc.subtract(log_probs, log_prior))
    return dc.tensor_sum(per_cell)
