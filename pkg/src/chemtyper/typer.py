"""Mention typing model, multi-label soft margin loss, training and decoding.

Features for a mention are ``[m; m_mask]`` from the sentence encoder
followed by the definition vector ``[f_cm; f_g; d_cls]``.  Ablations drop
sub-vectors; unlinkable mentions use learned stand-ins for the definition
parts.  A linear head maps the concatenation to one logit per type.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from chemtyper import metrics
from chemtyper import tensor as T
from chemtyper.encoders import (
    ContextInput,
    CrossModalFusion,
    EncoderConfig,
    GraphEncoder,
    TextEncoder,
    Vocab,
    context_input,
    description_ids,
    init_linear,
    linear,
)
from chemtyper.errors import ContractError
from chemtyper.labeler import AnnotatedSentence, MentionSpan
from chemtyper.molecule import AtomVocab, BondVocab, IndexedGraph, vocab_index
from chemtyper.ontology import LabelSpace
from chemtyper.resolver import Linked, ResolveResult
from chemtyper.tensor import ParamStore, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationConfig:
    use_graph: bool = True
    use_description: bool = True
    use_cross_modal: bool = True
    use_context_only: bool = True

    def __post_init__(self):
        if self.use_cross_modal and not (self.use_graph and self.use_description):
            raise ContractError("cross-modal attention needs both the graph and the description")

    def head_width(self, d: int) -> int:
        width = 2 * d if self.use_context_only else d
        return width + d * (self.use_cross_modal + self.use_graph + self.use_description)


ABLATIONS = {
    "full": AblationConfig(),
    "no-graph": AblationConfig(use_graph=False, use_cross_modal=False),
    "no-desc": AblationConfig(use_description=False, use_cross_modal=False),
    "no-xmodal": AblationConfig(use_cross_modal=False),
    "no-context-only": AblationConfig(use_context_only=False),
    "context": AblationConfig(use_graph=False, use_description=False, use_cross_modal=False),
}


@dataclass
class Prediction:
    probs: np.ndarray
    predicted: frozenset[int]


@dataclass(frozen=True)
class Example:
    """Parameter-independent inputs for one mention, computed once."""

    context: ContextInput
    desc: tuple[int, ...] | None
    graph: IndexedGraph | None
    y: tuple[int, ...]
    meta: tuple = ()

    @property
    def linked(self) -> bool:
        return self.desc is not None


# ---------------------------------------------------------------- loss


def check_targets(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ContractError(f"target has shape {y.shape}, expected ({n},)")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("targets must be binary")
    return y


def soft_margin_loss(logits: Tensor, y) -> Tensor:
    """-(1/C) sum_i [y_i log sigmoid(x_i) + (1 - y_i) log sigmoid(-x_i)]."""
    y = check_targets(y, logits.shape[-1])
    pos = T.log_sigmoid(logits)
    neg = T.log_sigmoid(-logits)
    return -T.mean(pos * y + neg * (1.0 - y))


def decide(probs: np.ndarray, threshold: float = 0.5) -> frozenset[int]:
    """Indices above threshold; the argmax alone when none clears it."""
    chosen = frozenset(int(i) for i in np.flatnonzero(probs > threshold))
    return chosen if chosen else frozenset({int(np.argmax(probs))})


# ---------------------------------------------------------------- model


class ChemTyper:
    def __init__(
        self,
        cfg: EncoderConfig,
        vocab: Vocab,
        atom_vocab: AtomVocab,
        label_space: LabelSpace,
        ablation: AblationConfig = AblationConfig(),
        seed: int = 0,
        bond_vocab: BondVocab | None = None,
        _init: bool = True,
    ):
        self.cfg, self.vocab, self.atom_vocab = cfg, vocab, atom_vocab
        self.bond_vocab = bond_vocab or BondVocab()
        self.label_space = label_space
        self.ablation = ablation
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed) if _init else None
        d = cfg.d
        self.text = TextEncoder(self.store, vocab, cfg, rng)
        self.graph = (
            GraphEncoder(self.store, len(atom_vocab), len(self.bond_vocab), cfg, rng) if ablation.use_graph else None
        )
        self.fusion = CrossModalFusion(self.store, cfg, rng) if ablation.use_cross_modal else None
        if rng is not None:
            for part, used in self._definition_parts():
                if used:
                    self.store.add(f"missing.{part}", rng.normal(0.0, 0.1, size=d))
            init_linear(self.store, "head", ablation.head_width(d), len(label_space), rng)
        self.head_width = ablation.head_width(d)

    def _definition_parts(self):
        ab = self.ablation
        return (("f_cm", ab.use_cross_modal), ("f_g", ab.use_graph), ("d_cls", ab.use_description))

    def check_widths(self) -> None:
        w = self.store["head.w"].shape
        if w != (self.head_width, len(self.label_space)):
            raise ContractError(f"head weight {w} does not match width {self.head_width} x {len(self.label_space)}")

    # inputs -----------------------------------------------------------

    def prepare(
        self,
        sentence: AnnotatedSentence,
        mention: MentionSpan,
        resolved: ResolveResult,
        meta: tuple = (),
    ) -> Example:
        ctx = context_input(sentence.words, mention.token_start, mention.token_end, self.vocab, self.cfg.max_len)
        y = [0] * len(self.label_space)
        for name in mention.labels:
            try:
                y[self.label_space.position(name)] = 1
            except KeyError:
                log.debug("label %s is not in the label space; ignored", name)
        desc = graph = None
        if isinstance(resolved, Linked):
            desc = description_ids(resolved.record.description, self.vocab, self.cfg.max_desc_len)
            graph = vocab_index(resolved.record.graph(), self.atom_vocab, self.bond_vocab)
        return Example(ctx, desc, graph, tuple(y), meta)

    # forward ----------------------------------------------------------

    def features(self, ex: Example) -> Tensor:
        ab = self.ablation
        enc = self.text.encode_context_ids(ex.context, with_mask=ab.use_context_only)
        parts = [enc.m_l]
        s = self.store
        if ex.linked:
            desc = nodes = None
            if ab.use_description or ab.use_cross_modal:
                desc = self.text.encode_description_ids(ex.desc)
            if ab.use_graph:
                nodes = self.graph(ex.graph).nodes
            if ab.use_cross_modal:
                parts.append(self.fusion(nodes, desc).f_cm)
            if ab.use_graph:
                parts.append(T.mean(nodes, axis=0))
            if ab.use_description:
                parts.append(desc.d_cls)
        else:
            parts += [s[f"missing.{part}"] for part, used in self._definition_parts() if used]
        x = T.concat(parts)
        if x.shape[0] != self.head_width:
            raise ContractError(f"feature width {x.shape[0]} differs from head width {self.head_width}")
        return x

    def logits(self, ex: Example) -> Tensor:
        return linear(self.store, "head", self.features(ex))

    def loss(self, ex: Example) -> Tensor:
        return soft_margin_loss(self.logits(ex), ex.y)

    def probs(self, ex: Example) -> np.ndarray:
        return T.sigmoid(self.logits(ex)).data.copy()

    def predict(self, ex: Example, threshold: float = 0.5) -> Prediction:
        p = self.probs(ex)
        return Prediction(p, decide(p, threshold))

    # persistence ------------------------------------------------------

    def config(self) -> dict:
        return {
            "encoder": self.cfg.to_json(),
            "ablation": asdict(self.ablation),
            "seed": self.seed,
            "labels": self.label_space.to_json(),
            "vocab": self.vocab.tokens,
            "atom_vocab": self.atom_vocab.to_json(),
        }

    def save(self, path: str | Path) -> None:
        T.save_checkpoint(path, self.store, self.config())

    @classmethod
    def load(cls, path: str | Path) -> "ChemTyper":
        config, params = T.load_checkpoint(path)
        model = cls(
            EncoderConfig.from_json(config["encoder"]),
            Vocab(config["vocab"]),
            AtomVocab.from_json(config["atom_vocab"]),
            LabelSpace.from_json(config["labels"]),
            AblationConfig(**config["ablation"]),
            seed=config["seed"],
        )
        model.store.load_state_dict(params)
        return model


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    threshold: float = 0.5
    seed: int = 0
    optimizer: str = "adam"
    keep_checkpoints: int = 1

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_micro_f1: float
    dev_accuracy: float


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "dev_micro_f1", "dev_accuracy"])
        for row in self.history:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.dev_micro_f1), repr(row.dev_accuracy)])
        return buf.getvalue()


def predict_all(model: ChemTyper, examples: Sequence[Example], threshold: float = 0.5) -> list[Prediction]:
    return [model.predict(ex, threshold) for ex in examples]


def gold_sets(examples: Sequence[Example]) -> list[frozenset[int]]:
    return [frozenset(i for i, v in enumerate(ex.y) if v) for ex in examples]


def score(model: ChemTyper, examples: Sequence[Example], threshold: float = 0.5) -> metrics.EvalReport:
    preds = [p.predicted for p in predict_all(model, examples, threshold)]
    return metrics.evaluate(preds, gold_sets(examples), labels=range(len(model.label_space)))


def batch_loss(model: ChemTyper, batch: Sequence[Example]) -> Tensor:
    total = model.loss(batch[0])
    for ex in batch[1:]:
        total = total + model.loss(ex)
    return T.scale(total, 1.0 / len(batch))


def train(
    model: ChemTyper,
    examples: Sequence[Example],
    config: TrainConfig,
    dev: Sequence[Example] = (),
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Mini-batch training with deterministic shuffling.

    Each epoch logs the mean training loss (averaged over batches as they
    were optimized) and dev Micro-F1 / accuracy.
    """
    if not examples:
        raise ContractError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    result = TrainResult()
    store = model.store
    store.zero_grad()
    saved: list[Path] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            loss = batch_loss(model, batch)
            T.backward(loss)
            store.step(config.lr, config.optimizer)
            total += float(loss.data) * len(batch)
            seen += len(batch)
        if dev:
            rep = score(model, dev, config.threshold)
            f1, acc = rep.micro_f1, rep.sample_accuracy
        else:
            f1 = acc = float("nan")
        result.history.append(EpochLog(epoch, total / seen, f1, acc))
        log.info("epoch %d loss %.6f dev micro-F1 %.4f", epoch, total / seen, f1)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"epoch_{epoch:03d}.json"
            model.save(path)
            saved.append(path)
            while config.keep_checkpoints > 0 and len(saved) > config.keep_checkpoints:
                saved.pop(0).unlink(missing_ok=True)
        if log_path is not None:
            Path(log_path).write_text(result.to_csv())
    return result


def examples_from_sentences(
    model: ChemTyper,
    sentences: Iterable[AnnotatedSentence],
    resolver,
) -> list[Example]:
    out = []
    for s_idx, sent in enumerate(sentences):
        for m_idx, mention in enumerate(sent.mentions):
            out.append(model.prepare(sent, mention, resolver.resolve(mention.surface), (sent.doc_id, s_idx, m_idx)))
    return out


def dumps_config(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
