"""Joint training of the identifier/classifier pair.

One document is one tape: parameters are lifted, the soft mask is sampled,
and the method's loss is assembled end to end so a single backward pass
reaches both networks.  Checkpoint selection is by validation weighted F1
computed with the hard top-k inference path (the one used at test time),
not the soft training path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diffcore as dc
from . import rng as rngmod
from .corpus import Dataset, Document
from .metrics import classification_scores
from .model import (ClassifierNet, IdentifierNet, Vocabulary, classify,
                    gumbel_topk_mask_node, hard_topk, identifier_logits,
                    lift_params, sampler_noise)
from .objectives import (LossBreakdown, LossWeights, fused_lasso_node, nll_node,
                         sparse_c_node, sparse_ib_node, sparse_n_node,
                         vecsort_penalty_node)
from .rationale import word_budget

METHODS = ("limitedink", "sparse_n", "sparse_c", "sparse_ib", "full_text")

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "limitedink"
    length_level: float = 0.2
    epochs: int = 20
    # default sized for this package's small convolutional encoder;
    # transformer-scale encoders are usually trained around 2e-5
    learning_rate: float = 1e-2
    batch_size: int = 16
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    # relaxation temperature anneals geometrically from temperature_start to
    # temperature: warm epochs carry gradient to the identifier, cold epochs
    # make the mask near-binary so the regularizers act on span structure.
    # the final value needs to be cold enough that near-ties between ranked
    # logits stop leaking softmax mass out of the budget at 40-50% levels
    temperature: float = 0.03
    temperature_start: float = 1.0
    embed_dim: int = 24
    hidden_dim: int = 24
    conv_window: int = 5
    dropout: float = 0.1
    share_embeddings: bool = False
    clip_norm: float = 5.0
    shuffled_labels: bool = False  # train against scrambled labels (ablation)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.length_level <= 1.0:
            raise ValueError(f"length level must be in (0, 1], got {self.length_level}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.temperature_start < self.temperature:
            raise ValueError("temperature_start must be >= temperature")


def relaxation_schedule(config: TrainConfig, epoch: int) -> float:
    """Geometric interpolation from ``temperature_start`` to ``temperature``."""
    if config.epochs <= 1 or config.temperature_start == config.temperature:
        return config.temperature
    frac = epoch / (config.epochs - 1)
    ratio = config.temperature / config.temperature_start
    return float(config.temperature_start * ratio ** frac)


def epoch_schedule(config: TrainConfig, epoch: int) -> TrainConfig:
    """The config actually trained at ``epoch``.

    Temperature follows the geometric anneal; the continuity weight ramps
    linearly over the whole run, reaching full strength only at the last
    epoch.  While the mask is still warm and diffuse, total variation is
    minimized by flat logits, so front-loading the weight collapses the
    identifier before it has learned anything worth making contiguous.
    """
    weights = config.weights
    denom = max(1, config.epochs - 1)
    weights = replace(weights, continuity=weights.continuity * epoch / denom)
    return replace(config, temperature=relaxation_schedule(config, epoch),
                   weights=weights)


class Adam:
    """Adam with bias correction and no weight decay."""

    def __init__(self, shapes: list[tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def assemble_loss(idn: IdentifierNet, cls: ClassifierNet,
                  lifted_idn: dict, lifted_cls: dict,
                  token_ids: np.ndarray, gold_index: int, config: TrainConfig,
                  sampler_seed: int, train: bool = True,
                  dropout_seed: Optional[int] = None
                  ) -> tuple[dc.Tensor, LossBreakdown]:
    """Build one document's loss on the caller's tape.

    Deterministic given the two seeds, so finite-difference probes of any
    single parameter see a fixed computation.
    """
    tape = lifted_cls["w"].tape
    n = len(token_ids)
    w = config.weights

    if config.method == "full_text":
        mask_col = tape.constant(np.ones((n, 1)))
        logits_col = None
    else:
        rng = rngmod.generator(dropout_seed, "dropout") if (
            train and dropout_seed is not None) else None
        logits_col = idn.forward(lifted_idn, token_ids, train=train, rng=rng)
        k = word_budget(config.length_level, n)
        noise = sampler_noise(sampler_seed, k, np.arange(n, dtype=np.uint64))
        mask_col, _ = gumbel_topk_mask_node(logits_col, k, config.temperature, noise)

    cls_logits = cls.forward(lifted_cls, token_ids, mask_col)
    task = nll_node(dc.log_softmax(cls_logits), gold_index)

    continuity = length_control = baseline = None
    if config.method == "limitedink":
        continuity = fused_lasso_node(mask_col)
        length_control = vecsort_penalty_node(mask_col, k)
    elif config.method == "sparse_n":
        baseline = sparse_n_node(mask_col)
    elif config.method == "sparse_c":
        baseline = sparse_c_node(mask_col, alpha=config.length_level)
    elif config.method == "sparse_ib":
        baseline = sparse_ib_node(logits_col, prior=config.length_level)

    total = task
    for weight, term in ((w.continuity, continuity),
                         (w.length_control, length_control),
                         (w.baseline, baseline)):
        if term is not None:
            total = dc.add(total, dc.multiply(tape.constant(np.asarray(weight)), term))

    breakdown = LossBreakdown.build(
        task=task.item(),
        continuity=continuity.item() if continuity is not None else 0.0,
        length_control=length_control.item() if length_control is not None else 0.0,
        baseline_penalty=baseline.item() if baseline is not None else 0.0,
        weights=w)
    return total, breakdown


@dataclass
class Checkpoint:
    config: TrainConfig
    label_names: list[str]
    vocab_tokens: list[str]
    vocab_hash: str
    identifier: dict[str, np.ndarray]
    classifier: dict[str, np.ndarray]
    best_epoch: int  # -1 means the untrained initialization
    best_val_f1: float
    history: list[dict] = field(default_factory=list)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.vocab_tokens)

    def nets(self) -> tuple[IdentifierNet, ClassifierNet]:
        idn = IdentifierNet(len(self.vocab_tokens), self.config.embed_dim,
                            self.config.hidden_dim, self.config.conv_window,
                            self.config.dropout)
        idn.params = {k: v.copy() for k, v in self.identifier.items()}
        cls = ClassifierNet(len(self.vocab_tokens), len(self.label_names),
                            self.config.embed_dim)
        cls.params = {k: v.copy() for k, v in self.classifier.items()}
        if self.config.share_embeddings:
            cls.params["embedding"] = idn.params["embedding"]
        return idn, cls

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "label_names": self.label_names,
            "vocab_tokens": self.vocab_tokens,
            "vocab_hash": self.vocab_hash,
            "identifier": {k: v.tolist() for k, v in self.identifier.items()},
            "classifier": {k: v.tolist() for k, v in self.classifier.items()},
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "history": self.history,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        version = payload.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {version!r}")
        cfg_dict = dict(payload["config"])
        cfg_dict["weights"] = LossWeights(**cfg_dict["weights"])
        config = TrainConfig(**cfg_dict)
        return cls(
            config=config,
            label_names=list(payload["label_names"]),
            vocab_tokens=list(payload["vocab_tokens"]),
            vocab_hash=payload["vocab_hash"],
            identifier={k: np.array(v, dtype=np.float64)
                        for k, v in payload["identifier"].items()},
            classifier={k: np.array(v, dtype=np.float64)
                        for k, v in payload["classifier"].items()},
            best_epoch=int(payload["best_epoch"]),
            best_val_f1=float(payload["best_val_f1"]),
            history=list(payload["history"]),
        )


def predict_label(idn: IdentifierNet, cls: ClassifierNet, vocab: Vocabulary,
                  doc: Document, method: str, level: float) -> int:
    """Hard-inference prediction: top-k mask (or full text) -> classifier."""
    ids = vocab.encode(doc.subtokens)
    if method == "full_text":
        mask = np.ones(len(ids))
    else:
        logits = identifier_logits(idn, ids)
        mask = hard_topk(logits, word_budget(level, len(ids))).astype(np.float64)
    return int(np.argmax(classify(cls, ids, mask)))


def _split_scores(idn, cls, vocab, docs, label_space, method, level) -> dict:
    gold = [label_space.index(d.label) for d in docs]
    pred = [predict_label(idn, cls, vocab, d, method, level) for d in docs]
    return classification_scores(gold, pred, label_space.names)


def _gold_index(doc: Document, dataset: Dataset, config: TrainConfig) -> int:
    if config.shuffled_labels:
        return rngmod.derive(config.seed, "scrambled-label", doc.doc_id) % len(
            dataset.label_space)
    return dataset.label_space.index(doc.label)


def train(dataset: Dataset, config: TrainConfig) -> Checkpoint:
    """Train one model; deterministic in ``config.seed``.

    With ``epochs=0`` the returned checkpoint holds the untouched
    initialization (best_epoch == -1).  Aborts with diagnostics if any batch
    produces a non-finite loss.
    """
    if not dataset.train:
        raise TrainingError("empty training split")
    vocab = Vocabulary.from_datasets(dataset)
    idn = IdentifierNet(len(vocab), config.embed_dim, config.hidden_dim,
                        config.conv_window, config.dropout,
                        seed=rngmod.derive(config.seed, "identifier"))
    cls = ClassifierNet(
        len(vocab), len(dataset.label_space), config.embed_dim,
        seed=rngmod.derive(config.seed, "classifier"),
        shared_embedding=idn.params["embedding"] if config.share_embeddings else None)

    registry: list[np.ndarray] = []
    seen_arrays: set[int] = set()
    for net in (idn, cls):
        for array in net.params.values():
            if id(array) not in seen_arrays:
                seen_arrays.add(id(array))
                registry.append(array)
    adam = Adam([a.shape for a in registry], lr=config.learning_rate)

    def snapshot() -> tuple[dict, dict]:
        return ({k: v.copy() for k, v in idn.params.items()},
                {k: v.copy() for k, v in cls.params.items()})

    def val_f1() -> float:
        if not dataset.val:
            return 0.0
        return _split_scores(idn, cls, vocab, dataset.val, dataset.label_space,
                             config.method, config.length_level)["weighted_f1"]

    best_idn, best_cls = snapshot()
    best_f1 = val_f1()
    best_epoch = -1
    history: list[dict] = []

    train_docs = dataset.train
    for epoch in range(config.epochs):
        epoch_config = epoch_schedule(config, epoch)
        order = rngmod.generator(config.seed, "order", epoch).permutation(len(train_docs))
        epoch_parts = {"task": 0.0, "continuity": 0.0, "length_control": 0.0,
                       "baseline_penalty": 0.0, "total": 0.0}
        for start in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            grads = [np.zeros_like(a) for a in registry]
            for b_idx, doc in enumerate(batch):
                tape = dc.Tape()
                flat, (lifted_idn, lifted_cls) = lift_params(tape, idn, cls)
                token_ids = vocab.encode(doc.subtokens)
                loss, parts = assemble_loss(
                    idn, cls, lifted_idn, lifted_cls, token_ids,
                    _gold_index(doc, dataset, config), epoch_config,
                    sampler_seed=rngmod.derive(config.seed, "sampler", epoch,
                                               doc.doc_id),
                    train=True,
                    dropout_seed=rngmod.derive(config.seed, "drop", epoch,
                                               doc.doc_id))
                if not np.isfinite(parts.total):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}, "
                        f"doc {doc.doc_id}: {parts}")
                dc.backward(tape, loss)
                for slot, (array, leaf) in enumerate(flat):
                    if leaf.grad is not None:
                        grads[slot] += leaf.grad
                for key in epoch_parts:
                    epoch_parts[key] += getattr(parts, key)
            scale = 1.0 / len(batch)
            for g in grads:
                g *= scale
            clip_global_norm(grads, config.clip_norm)
            adam.step(registry, grads)
        n_train = len(train_docs)
        epoch_mean = {k: v / n_train for k, v in epoch_parts.items()}
        f1 = val_f1()
        history.append({"epoch": epoch, "val_weighted_f1": f1, **epoch_mean})
        # ties go to the later epoch: once val F1 saturates, the remaining
        # epochs keep tightening the mask regularizers
        if f1 >= best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_idn, best_cls = snapshot()

    return Checkpoint(
        config=config,
        label_names=list(dataset.label_space.names),
        vocab_tokens=list(vocab.tokens),
        vocab_hash=vocab.content_hash(),
        identifier=best_idn,
        classifier=best_cls,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        history=history,
    )


SWEEP_LEVELS = (10, 20, 30, 40, 50)


def sweep(dataset: Dataset, config: TrainConfig,
          levels: tuple[int, ...] = SWEEP_LEVELS) -> dict[int, Checkpoint]:
    """Train one checkpoint per length level (percent keys)."""
    out = {}
    for pct in levels:
        out[pct] = train(dataset, replace(config, length_level=pct / 100.0))
    return out


def evaluate(checkpoint: Checkpoint, dataset: Dataset, split: str = "test") -> dict:
    """End-task scores for a checkpoint on one split (hard inference)."""
    docs = dataset.split(split)
    if not docs:
        raise ValueError(f"split {split!r} is empty")
    idn, cls = checkpoint.nets()
    vocab = checkpoint.vocabulary()
    scores = _split_scores(idn, cls, vocab, docs, dataset.label_space,
                           checkpoint.config.method, checkpoint.config.length_level)
    scores["n_documents"] = len(docs)
    scores["method"] = checkpoint.config.method
    scores["length_level"] = checkpoint.config.length_level
    return scores
