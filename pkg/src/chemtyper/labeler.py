"""Distant supervision: dictionary tagging of raw corpus text.

Mentions are found by greedy left-to-right longest match of normalized
token n-grams against a typed entity dictionary.  Output sentences are
written as JSONL and read back by the typer's data loader.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from chemtyper.errors import ContractError

SPLITTER = "newline+period-token"

_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {v: k for k, v in _OPEN.items()}
_LEADING = set("\"'`<") | set(_OPEN) | set(",;:")
_TRAILING = set("\"'`>.,;:!?") | set(_CLOSE)


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class MentionSpan:
    token_start: int
    token_end: int
    surface: str
    labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if not 0 <= self.token_start < self.token_end:
            raise ContractError(f"bad mention span [{self.token_start}, {self.token_end})")


@dataclass
class AnnotatedSentence:
    doc_id: str
    text: str
    tokens: list[Token]
    mentions: list[MentionSpan] = field(default_factory=list)

    def __post_init__(self):
        last = 0
        for tok in self.tokens:
            if tok.start < last or tok.end > len(self.text) or tok.start >= tok.end:
                raise ContractError(f"token offsets out of order or bounds in {self.doc_id!r}")
            last = tok.end
        taken = -1
        for m in sorted(self.mentions, key=lambda m: m.token_start):
            if m.token_end > len(self.tokens):
                raise ContractError(f"mention {m.surface!r} runs past the sentence end")
            if m.token_start < taken:
                raise ContractError(f"overlapping mentions in {self.doc_id!r}")
            taken = m.token_end

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def span_text(self, m: MentionSpan) -> str:
        return self.text[self.tokens[m.token_start].start : self.tokens[m.token_end - 1].end]

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "tokens": [[t.surface, t.start, t.end] for t in self.tokens],
            "mentions": [
                {
                    "start_tok": m.token_start,
                    "end_tok": m.token_end,
                    "surface": m.surface,
                    "labels": sorted(m.labels),
                }
                for m in self.mentions
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotatedSentence":
        text = obj["text"]
        if "tokens" in obj:
            tokens = [Token(s, a, b) for s, a, b in obj["tokens"]]
        else:
            tokens = tokenize(text)
        mentions = [
            MentionSpan(m["start_tok"], m["end_tok"], m.get("surface", ""), frozenset(m.get("labels", [])))
            for m in obj.get("mentions", [])
        ]
        sent = cls(str(obj.get("doc_id", "")), text, tokens, mentions)
        fixed = []
        for m in sent.mentions:
            fixed.append(m if m.surface else MentionSpan(m.token_start, m.token_end, sent.span_text(m), m.labels))
        sent.mentions = fixed
        return sent


# ---------------------------------------------------------------- tokenization


def _match_forward(run: str, i: int, stop: int) -> int | None:
    want, depth = _OPEN[run[i]], 0
    for j in range(i, stop):
        if run[j] == run[i]:
            depth += 1
        elif run[j] == want:
            depth -= 1
            if depth == 0:
                return j
    return None


def _match_backward(run: str, i: int, start: int) -> int | None:
    want, depth = _CLOSE[run[i]], 0
    for j in range(i, start - 1, -1):
        if run[j] == run[i]:
            depth += 1
        elif run[j] == want:
            depth -= 1
            if depth == 0:
                return j
    return None


def _split_run(run: str, offset: int) -> list[Token]:
    lo, hi = 0, len(run)
    head: list[int] = []
    tail: list[int] = []
    while lo < hi:
        last = run[hi - 1]
        if last in _TRAILING and last not in _CLOSE:
            tail.insert(0, hi - 1)
            hi -= 1
            continue
        ch = run[lo]
        if ch in _LEADING:
            if ch in _OPEN:
                close = _match_forward(run, lo, hi)
                if close is not None and close != hi - 1:
                    break  # bracket closes inside the word: chemistry-internal
                if close == hi - 1:
                    tail.insert(0, hi - 1)
                    hi -= 1
            head.append(lo)
            lo += 1
            continue
        if last in _CLOSE and _match_backward(run, hi - 1, lo) is None:
            tail.insert(0, hi - 1)
            hi -= 1
            continue
        break
    out = [Token(run[i], offset + i, offset + i + 1) for i in head]
    if lo < hi:
        out.append(Token(run[lo:hi], offset + lo, offset + hi))
    out += [Token(run[i], offset + i, offset + i + 1) for i in tail]
    return out


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then peel surrounding punctuation off each run.

    Brackets that open and close inside a run, and hyphens or commas
    between letters and digits, stay attached so systematic chemical names
    survive as one token.
    """
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        tokens += _split_run(text[i:j], i)
        i = j
    return tokens


def split_sentences(text: str) -> list[tuple[str, list[Token]]]:
    """Break text at newlines and after standalone period tokens."""
    out = []
    for line in text.split("\n"):
        tokens = tokenize(line)
        current: list[Token] = []
        for tok in tokens:
            current.append(tok)
            if tok.surface == ".":
                out.append(_rebase(line, current))
                current = []
        if current:
            out.append(_rebase(line, current))
    return out


def _rebase(line: str, toks: list[Token]) -> tuple[str, list[Token]]:
    base = toks[0].start
    return line[base : toks[-1].end], [Token(t.surface, t.start - base, t.end - base) for t in toks]


# ---------------------------------------------------------------- tagging


def _key_tokens(key: str) -> tuple[str, ...]:
    return tuple(t.surface.lower() for t in tokenize(key))


class DictionaryMatcher:
    """Precomputed n-gram index over a typed entity dictionary."""

    def __init__(self, dictionary: Mapping[str, Iterable]):
        self.index: dict[tuple[str, ...], frozenset[str]] = {}
        for key, types in dictionary.items():
            toks = _key_tokens(key)
            if toks:
                self.index[toks] = self.index.get(toks, frozenset()) | frozenset(str(t) for t in types)
        self.max_n = max((len(k) for k in self.index), default=0)

    def find(self, words: Sequence[str]) -> list[tuple[int, int, frozenset[str]]]:
        lowered = [w.lower() for w in words]
        spans = []
        i = 0
        while i < len(lowered):
            for n in range(min(self.max_n, len(lowered) - i), 0, -1):
                labels = self.index.get(tuple(lowered[i : i + n]))
                if labels is not None:
                    spans.append((i, i + n, labels))
                    i += n
                    break
            else:
                i += 1
        return spans


def tag(
    text: str,
    tokens: list[Token],
    dictionary: Mapping[str, Iterable] | DictionaryMatcher,
    doc_id: str = "",
) -> AnnotatedSentence:
    matcher = dictionary if isinstance(dictionary, DictionaryMatcher) else DictionaryMatcher(dictionary)
    sent = AnnotatedSentence(doc_id, text, tokens)
    for a, b, labels in matcher.find(sent.words):
        sent.mentions.append(MentionSpan(a, b, text[tokens[a].start : tokens[b - 1].end], labels))
    return sent


def tag_text(text: str, dictionary, doc_id: str = "") -> AnnotatedSentence:
    return tag(text, tokenize(text), dictionary, doc_id)


def tag_document(doc_id: str, text: str, dictionary) -> list[AnnotatedSentence]:
    matcher = dictionary if isinstance(dictionary, DictionaryMatcher) else DictionaryMatcher(dictionary)
    return [tag(s, toks, matcher, doc_id) for s, toks in split_sentences(text)]


# ---------------------------------------------------------------- agreement


def _mention_keys(sentences: Iterable[AnnotatedSentence]) -> tuple[set, set]:
    docs, keys = set(), set()
    counters: dict[str, int] = {}
    for s in sentences:
        docs.add(s.doc_id)
        k = counters.get(s.doc_id, 0)
        counters[s.doc_id] = k + 1
        for m in s.mentions:
            keys.add((s.doc_id, k, m.token_start, m.token_end, frozenset(m.labels)))
    return docs, keys


def pass_agreement_f1(pass_a: Iterable[AnnotatedSentence], pass_b: Iterable[AnnotatedSentence]) -> float:
    """Micro F1 of ``pass_a`` against ``pass_b`` taken as gold.

    A mention matches only when its sentence, span and full label set agree.
    """
    docs_a, a = _mention_keys(pass_a)
    docs_b, b = _mention_keys(pass_b)
    if docs_a != docs_b:
        raise AlignmentError(
            f"passes cover different documents: only in first {sorted(docs_a - docs_b)}, "
            f"only in second {sorted(docs_b - docs_a)}"
        )
    if not a and not b:
        return 1.0
    tp = len(a & b)
    denom = len(a) + len(b)
    return 2.0 * tp / denom


# ---------------------------------------------------------------- corpus IO


def read_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Documents as ``(doc_id, text)`` from a directory of .txt files, a single .txt, or JSONL."""
    path = Path(path)
    if path.is_dir():
        return [(p.stem, p.read_text(encoding="utf-8")) for p in sorted(path.glob("*.txt"))]
    if path.suffix == ".jsonl":
        docs = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                docs.append((str(obj["doc_id"]), obj["text"]))
        return docs
    return [(path.stem, path.read_text(encoding="utf-8"))]


def write_jsonl(sentences: Iterable[AnnotatedSentence], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[AnnotatedSentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(AnnotatedSentence.from_json(json.loads(line)))
    return out
