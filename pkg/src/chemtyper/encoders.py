"""Representation learning: mention context, molecular graph, and fusion.

* ``TextEncoder`` - token embedding + sinusoidal positions + post-LN
  transformer layers; used for both corpus sentences and descriptions.
* ``GraphEncoder`` - GIN with edge features: each layer sums the
  (1 + eps)-scaled node state with ``neighbor + bond`` messages and applies
  a d -> 2d (tanh) -> d feed-forward net.
* ``CrossModalFusion`` - one transformer layer over the stacked node and
  description-token rows, mean pooled; no positional terms are added.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from chemtyper import tensor as T
from chemtyper.errors import ContractError
from chemtyper.labeler import AnnotatedSentence, MentionSpan, tokenize
from chemtyper.molecule import IndexedGraph
from chemtyper.tensor import ParamStore, Tensor

PAD, UNK, CLS, SEP, MASK, MARKER = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "*"
SPECIALS = (PAD, UNK, CLS, SEP, MASK, MARKER)


@dataclass
class EncoderConfig:
    d: int = 64
    text_layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    gin_layers: int = 3
    epsilon: float = 0.0
    max_len: int = 64
    max_desc_len: int = 64

    def __post_init__(self):
        if self.d % self.heads:
            raise ContractError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.gin_layers < 1:
            raise ContractError("the graph encoder needs at least one layer")
        if self.max_len < 4:
            raise ContractError("max_len must leave room for [CLS], two markers and [SEP]")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        return cls(**known)


class Vocab:
    """Lowercased word vocabulary; index = position, specials first."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        for tok in list(SPECIALS) + list(tokens):
            if tok not in self.index:
                self.index[tok] = len(self.tokens)
                self.tokens.append(tok)

    @classmethod
    def build(cls, texts: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for words in texts:
            for w in words:
                key = w.lower()
                counts[key] = counts.get(key, 0) + 1
        return cls(sorted(w for w, c in counts.items() if c >= min_count and w not in SPECIALS))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, word: str) -> int:
        if word in SPECIALS:
            return self.index[word]
        return self.index.get(word.lower(), self.index[UNK])

    def ids(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        vocab = cls.__new__(cls)
        vocab.tokens = lines
        vocab.index = {t: i for i, t in enumerate(lines)}
        missing = [s for s in SPECIALS if s not in vocab.index]
        if missing:
            raise ContractError(f"vocabulary file {path} lacks special tokens {missing}")
        return vocab


# ---------------------------------------------------------------- shared layers


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    store.add(f"{name}.w", T.glorot(rng, fan_in, fan_out))
    store.add(f"{name}.b", np.zeros(fan_out))


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return T.affine(x, store[f"{name}.w"], store[f"{name}.b"])


def init_transformer_layer(store: ParamStore, prefix: str, d: int, ff: int, rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(store, f"{prefix}.attn.{proj}", d, d, rng)
    store.add(f"{prefix}.ln1.g", np.ones(d))
    store.add(f"{prefix}.ln1.b", np.zeros(d))
    init_linear(store, f"{prefix}.ff1", d, ff, rng)
    init_linear(store, f"{prefix}.ff2", ff, d, rng)
    store.add(f"{prefix}.ln2.g", np.ones(d))
    store.add(f"{prefix}.ln2.b", np.zeros(d))


def self_attention(store: ParamStore, prefix: str, x: Tensor, heads: int) -> Tensor:
    q = linear(store, f"{prefix}.attn.q", x)
    k = linear(store, f"{prefix}.attn.k", x)
    v = linear(store, f"{prefix}.attn.v", x)
    return linear(store, f"{prefix}.attn.o", T.attention(q, k, v, heads))


def transformer_layer(store: ParamStore, prefix: str, x: Tensor, heads: int) -> Tensor:
    """Post-LN encoder layer: LN(x + MHA(x)), then LN(h + FFN(h))."""
    h = T.layer_norm(x + self_attention(store, prefix, x, heads), store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"])
    ff = linear(store, f"{prefix}.ff2", T.relu(linear(store, f"{prefix}.ff1", h)))
    return T.layer_norm(h + ff, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"])


# ---------------------------------------------------------------- text


@dataclass
class EncodedMention:
    m: Tensor
    m_mask: Tensor
    m_l: Tensor


@dataclass
class EncodedDescription:
    rows: Tensor  # b x d, description tokens without [CLS]/[SEP]
    d_cls: Tensor


@dataclass(frozen=True)
class ContextInput:
    """Token ids for the marked sentence and its masked variant."""

    marked: tuple[int, ...]
    marker_pos: int
    masked: tuple[int, ...]
    mask_pos: int


def context_input(words: Sequence[str], start: int, end: int, vocab: Vocab, max_len: int) -> ContextInput:
    """Build ``[CLS] .. * mention * .. [SEP]`` and ``[CLS] .. [MASK] .. [SEP]``.

    Over-long sentences lose tokens from the right; the mention itself is
    never cut.
    """
    if not 0 <= start < end <= len(words):
        raise ContractError(f"mention span [{start}, {end}) outside a {len(words)}-token sentence")
    left, mention, right = list(words[:start]), list(words[start:end]), list(words[end:])
    marked = [CLS] + left + [MARKER] + mention + [MARKER] + right
    masked = [CLS] + left + [MASK] + right
    close_marker = 1 + len(left) + 1 + len(mention)
    if close_marker > max_len - 2:
        raise ContractError(
            f"mention ends at position {close_marker} but only {max_len} tokens fit; it would be truncated"
        )
    marked = marked[: max_len - 1] + [SEP]
    masked = masked[: max_len - 1] + [SEP]
    return ContextInput(tuple(vocab.ids(marked)), 1 + len(left), tuple(vocab.ids(masked)), 1 + len(left))


def description_ids(text: str, vocab: Vocab, max_len: int) -> tuple[int, ...]:
    words = [t.surface for t in tokenize(text)]
    if not words:
        raise ContractError("description has no tokens")
    return tuple(vocab.ids([CLS] + words[: max_len - 2] + [SEP]))


class TextEncoder:
    prefix = "text"

    def __init__(self, store: ParamStore, vocab: Vocab, cfg: EncoderConfig, rng: np.random.Generator | None):
        self.store, self.vocab, self.cfg = store, vocab, cfg
        if rng is not None:
            store.add(f"{self.prefix}.tok_emb", rng.normal(0.0, 1.0, size=(len(vocab), cfg.d)))
            for layer in range(cfg.text_layers):
                init_transformer_layer(store, f"{self.prefix}.layer{layer}", cfg.d, cfg.ff_mult * cfg.d, rng)
        self.positions = T.sinusoidal_positions(max(cfg.max_len, cfg.max_desc_len), cfg.d)

    def load_token_embeddings(self, path: str | Path) -> int:
        """Overwrite token rows from a ``word v1 v2 ...`` text file; returns rows replaced."""
        emb = self.store[f"{self.prefix}.tok_emb"].data
        hits = 0
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.rstrip().split(" ")
            if len(parts) != self.cfg.d + 1:
                continue
            idx = self.vocab.index.get(parts[0].lower())
            if idx is not None:
                emb[idx] = np.asarray(parts[1:], dtype=np.float64)
                hits += 1
        return hits

    def __call__(self, ids: Sequence[int]) -> Tensor:
        x = T.embedding(self.store[f"{self.prefix}.tok_emb"], ids) + self.positions[: len(ids)]
        for layer in range(self.cfg.text_layers):
            x = transformer_layer(self.store, f"{self.prefix}.layer{layer}", x, self.cfg.heads)
        return x

    def encode_context_ids(self, ctx: ContextInput, with_mask: bool = True) -> EncodedMention:
        m = self(ctx.marked)[ctx.marker_pos]
        if not with_mask:
            return EncodedMention(m, None, m)
        m_mask = self(ctx.masked)[ctx.mask_pos]
        return EncodedMention(m, m_mask, T.concat([m, m_mask]))

    def encode_context(self, sentence: AnnotatedSentence, mention: MentionSpan) -> EncodedMention:
        ctx = context_input(sentence.words, mention.token_start, mention.token_end, self.vocab, self.cfg.max_len)
        return self.encode_context_ids(ctx)

    def encode_description_ids(self, ids: Sequence[int]) -> EncodedDescription:
        out = self(ids)
        return EncodedDescription(out[1:-1], out[0])

    def encode_description(self, text: str) -> EncodedDescription:
        return self.encode_description_ids(description_ids(text, self.vocab, self.cfg.max_desc_len))


# ---------------------------------------------------------------- graph


@dataclass
class GraphEncoding:
    nodes: Tensor  # a x d, final layer
    layers: list[Tensor]
    edges: Tensor | None
    epsilon: float


class GraphEncoder:
    prefix = "gin"

    def __init__(self, store: ParamStore, n_atom_types: int, n_bond_types: int, cfg: EncoderConfig, rng):
        self.store, self.cfg = store, cfg
        if rng is not None:
            d = cfg.d
            store.add(f"{self.prefix}.atom_emb", rng.normal(0.0, 1.0, size=(n_atom_types, d)))
            store.add(f"{self.prefix}.bond_emb", rng.normal(0.0, 1.0, size=(n_bond_types, d)))
            for layer in range(cfg.gin_layers):
                init_linear(store, f"{self.prefix}.layer{layer}.ff1", d, 2 * d, rng)
                init_linear(store, f"{self.prefix}.layer{layer}.ff2", 2 * d, d, rng)

    def __call__(self, graph: IndexedGraph) -> GraphEncoding:
        if graph.num_atoms == 0:
            raise ContractError("cannot encode an empty graph")
        s = self.store
        n = T.embedding(s[f"{self.prefix}.atom_emb"], graph.atom_ids)
        layers = [n]
        edges = None
        if graph.src:
            edges = T.embedding(s[f"{self.prefix}.bond_emb"], graph.edge_types)
            scatter = np.zeros((graph.num_atoms, len(graph.src)))
            scatter[list(graph.dst), np.arange(len(graph.src))] = 1.0
            src = np.asarray(graph.src)
        for layer in range(self.cfg.gin_layers):
            agg = T.scale(n, 1.0 + self.cfg.epsilon)
            if edges is not None:
                agg = agg + T.matmul(scatter, n[src] + edges)
            p = f"{self.prefix}.layer{layer}"
            n = linear(s, f"{p}.ff2", T.tanh(linear(s, f"{p}.ff1", agg)))
            layers.append(n)
        return GraphEncoding(n, layers, edges, self.cfg.epsilon)


# ---------------------------------------------------------------- fusion


@dataclass
class DefinitionFeatures:
    f_cm: Tensor | None
    f_g: Tensor | None
    d_cls: Tensor | None
    f: Tensor


class CrossModalFusion:
    prefix = "fusion"

    def __init__(self, store: ParamStore, cfg: EncoderConfig, rng):
        self.store, self.cfg = store, cfg
        if rng is not None:
            init_transformer_layer(store, f"{self.prefix}.layer", cfg.d, cfg.ff_mult * cfg.d, rng)

    def __call__(self, nodes: Tensor, desc: EncodedDescription) -> DefinitionFeatures:
        if nodes.shape[-1] != desc.rows.shape[-1] or nodes.shape[-1] != self.cfg.d:
            raise ContractError(f"modality widths differ: nodes {nodes.shape}, description {desc.rows.shape}")
        x = T.vstack([nodes, desc.rows])
        f_cm = T.mean(transformer_layer(self.store, f"{self.prefix}.layer", x, self.cfg.heads), axis=0)
        f_g = T.mean(nodes, axis=0)
        return DefinitionFeatures(f_cm, f_g, desc.d_cls, T.concat([f_cm, f_g, desc.d_cls]))
