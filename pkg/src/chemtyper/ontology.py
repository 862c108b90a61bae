"""Fine-grained type ontology built from a category graph.

A category graph may contain cycles and diamonds.  ``build_tree`` extracts
a depth-capped tree from it, pruning categories whose names are poorly
covered by a domain dictionary.  Entity bags are then filled from page
titles and synonyms, "Other" leaves receive the set difference between
their parent and their named siblings, and ``flatten`` turns the leaves
into the label space used by the classifier.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from chemtyper.errors import ContractError

TYPE_SEPARATOR = "/"
_WORD_RE = re.compile(r"[a-z]+")


class OntologyError(ValueError):
    pass


class MissingRootError(OntologyError):
    pass


class OrderingError(ContractError):
    """An "Other" node was derived before its parent's bag was filled."""


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def unigrams(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


@dataclass
class CategoryNode:
    name: str
    children: list["CategoryNode"] = field(default_factory=list)
    is_other: bool = False
    entities: set[str] = field(default_factory=set)
    populated: bool = False

    def __post_init__(self):
        if self.is_other and not self.name.startswith("Other"):
            raise OntologyError(f"Other node must be named 'Other ...', got {self.name!r}")

    def walk(self) -> Iterator[tuple["CategoryNode", tuple[str, ...]]]:
        """Pre-order traversal yielding each node with its root path."""
        stack = [(self, (self.name,))]
        while stack:
            node, path = stack.pop()
            yield node, path
            for child in reversed(node.children):
                stack.append((child, path + (child.name,)))

    def names(self) -> list[str]:
        return [n.name for n, _ in self.walk()]

    def find(self, name: str) -> "CategoryNode | None":
        for node, _ in self.walk():
            if node.name == name:
                return node
        return None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "is_other": self.is_other,
            "entities": sorted(self.entities),
            "children": [c.to_json() for c in self.children],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CategoryNode":
        node = cls(
            obj["name"],
            [cls.from_json(c) for c in obj.get("children", [])],
            obj.get("is_other", False),
            set(obj.get("entities", [])),
        )
        node.populated = bool(node.entities)
        return node

    def shape(self) -> tuple:
        """Name structure only, for comparisons in tests and summaries."""
        return (self.name, tuple(c.shape() for c in self.children))


@dataclass(frozen=True, order=True)
class FineGrainedType:
    path: tuple[str, ...]

    def __post_init__(self):
        if not self.path:
            raise OntologyError("a type path needs at least the root")

    @property
    def leaf(self) -> str:
        return self.path[-1]

    def __str__(self) -> str:
        return TYPE_SEPARATOR.join(self.path)

    @classmethod
    def parse(cls, text: str) -> "FineGrainedType":
        return cls(tuple(text.split(TYPE_SEPARATOR)))


class LabelSpace:
    """Ordered set of fine-grained types; positions are classifier outputs."""

    def __init__(self, types: Iterable[FineGrainedType]):
        self.types: list[FineGrainedType] = list(types)
        self.index: dict[FineGrainedType, int] = {}
        for i, t in enumerate(self.types):
            if t in self.index:
                raise OntologyError(f"duplicate type {t}")
            self.index[t] = i
        self._by_name = {str(t): i for i, t in enumerate(self.types)}

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def position(self, t: FineGrainedType | str) -> int:
        if isinstance(t, str):
            return self._by_name[t]
        return self.index[t]

    def names(self) -> list[str]:
        return [str(t) for t in self.types]

    def to_json(self) -> list[str]:
        return self.names()

    @classmethod
    def from_json(cls, names: list[str]) -> "LabelSpace":
        return cls(FineGrainedType.parse(n) for n in names)


class TypedEntityDictionary(Mapping[str, frozenset]):
    """Normalized entity string -> set of leaf types."""

    def __init__(self, entries: Mapping[str, Iterable[FineGrainedType]] | None = None):
        self._map: dict[str, frozenset[FineGrainedType]] = {}
        for key, types in (entries or {}).items():
            self._map[normalize(key)] = self._map.get(normalize(key), frozenset()) | frozenset(types)

    def __getitem__(self, key: str) -> frozenset:
        return self._map[normalize(key)]

    def __iter__(self):
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, key) -> bool:
        return isinstance(key, str) and normalize(key) in self._map

    def to_json(self) -> dict[str, list[str]]:
        return {k: sorted(str(t) for t in v) for k, v in sorted(self._map.items())}

    @classmethod
    def from_json(cls, obj: Mapping[str, list[str]]) -> "TypedEntityDictionary":
        return cls({k: [FineGrainedType.parse(t) for t in v] for k, v in obj.items()})


# ---------------------------------------------------------------- inputs


@dataclass
class CategoryGraph:
    """Directed category graph plus the page titles attached to each category."""

    edges: list[tuple[str, str]]
    pages: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self._children: dict[str, list[str]] = {}
        for parent, child in self.edges:
            kids = self._children.setdefault(parent, [])
            if child not in kids:
                kids.append(child)
        self._nodes = set(self._children) | {c for _, c in self.edges} | set(self.pages)

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def children(self, name: str) -> list[str]:
        return self._children.get(name, [])

    @classmethod
    def load(cls, path: str | Path) -> "CategoryGraph":
        obj = json.loads(Path(path).read_text())
        return cls([tuple(e) for e in obj["edges"]], obj.get("pages", {}))


def load_terms(path: str | Path) -> set[str]:
    return {line.strip() for line in Path(path).read_text().splitlines() if line.strip()}


def load_synonyms(path: str | Path) -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        canonical, *syns = line.split("\t")
        table.setdefault(canonical.strip(), []).extend(s.strip() for s in syns if s.strip())
    return table


# ---------------------------------------------------------------- operations


def coverage(graph: CategoryGraph, name: str, dictionary_words: set[str]) -> float:
    """Fraction of unique 1-grams in a category and its direct children's names found in the dictionary."""
    words = unigrams(name)
    for child in graph.children(name):
        words |= unigrams(child)
    if not words:
        return 0.0
    return len(words & dictionary_words) / len(words)


def build_tree(
    graph: CategoryGraph,
    root: str,
    dictionary: Iterable[str],
    max_depth: int = 3,
    coverage_threshold: float = 0.2,
    add_other: bool = True,
) -> CategoryNode:
    """Extract a tree of categories reachable from ``root``.

    The root sits at depth 0 and nodes deeper than ``max_depth`` are cut.
    A non-root category is dropped, together with everything only reachable
    through it, when its 1-gram coverage is below ``coverage_threshold``.
    Each kept category hangs under the first parent met in depth-first order
    among the parents that reach it by a shortest surviving path; this keeps
    the result a tree and makes pruning monotone in the threshold.
    """
    if root not in graph:
        raise MissingRootError(f"root category {root!r} is not in the category graph")
    if max_depth < 1:
        raise ContractError(f"max_depth must be >= 1, got {max_depth}")
    if not 0.0 <= coverage_threshold <= 1.0:
        raise ContractError(f"coverage_threshold must lie in [0, 1], got {coverage_threshold}")

    words: set[str] = set()
    for term in dictionary:
        words |= unigrams(term)

    keep_cache: dict[str, bool] = {}

    def kept(name: str) -> bool:
        if name not in keep_cache:
            keep_cache[name] = coverage(graph, name, words) >= coverage_threshold
        return keep_cache[name]

    depth = {root: 0}
    queue = deque([root])
    while queue:
        name = queue.popleft()
        if depth[name] == max_depth:
            continue
        for child in graph.children(name):
            if child not in depth and kept(child):
                depth[child] = depth[name] + 1
                queue.append(child)

    top = CategoryNode(root)
    placed = {root}
    stack = [top]
    while stack:
        node = stack.pop()
        for child in graph.children(node.name):
            if child in placed or depth.get(child) != depth[node.name] + 1:
                continue
            placed.add(child)
            node.children.append(CategoryNode(child))
        stack.extend(reversed(node.children))

    if add_other:
        for node, _ in list(top.walk()):
            if node.children and not node.is_other:
                node.children.append(CategoryNode(f"Other {node.name}", is_other=True))
    return top


def populate_entities(
    tree: CategoryNode,
    pages: Mapping[str, Iterable[str]],
    synonyms: Mapping[str, Iterable[str]] | None = None,
) -> CategoryNode:
    """Fill every category's bag with the page titles of its whole subtree.

    Each title is expanded with its synonyms; all strings are normalized.
    "Other" nodes are left for ``derive_other_nodes``.
    """
    syn = {}
    for canonical, items in (synonyms or {}).items():
        syn.setdefault(normalize(canonical), []).extend(normalize(s) for s in items)

    def expand(titles: Iterable[str]) -> set[str]:
        out = set()
        for title in titles:
            key = normalize(title)
            if not key:
                continue
            out.add(key)
            out.update(s for s in syn.get(key, ()) if s)
        return out

    def fill(node: CategoryNode) -> set[str]:
        bag = expand(pages.get(node.name, ()))
        for child in node.children:
            if not child.is_other:
                bag |= fill(child)
        node.entities = bag
        node.populated = True
        return bag

    if tree.is_other:
        raise OrderingError("the root cannot be an Other node")
    fill(tree)
    return tree


def derive_other_nodes(tree: CategoryNode) -> CategoryNode:
    for node, _ in tree.walk():
        others = [c for c in node.children if c.is_other]
        if not others:
            continue
        if len(others) > 1:
            raise OntologyError(f"{node.name!r} has more than one Other child")
        if not node.populated:
            raise OrderingError(f"parent {node.name!r} of {others[0].name!r} has no entity bag yet")
        covered: set[str] = set()
        for sibling in node.children:
            if not sibling.is_other:
                covered |= sibling.entities
        others[0].entities = node.entities - covered
        others[0].populated = True
    return tree


def flatten(tree: CategoryNode) -> tuple[LabelSpace, TypedEntityDictionary]:
    types = []
    entries: dict[str, set[FineGrainedType]] = {}
    for node, path in tree.walk():
        if not node.is_leaf:
            continue
        t = FineGrainedType(path)
        types.append(t)
        for entity in node.entities:
            entries.setdefault(entity, set()).add(t)
    return LabelSpace(types), TypedEntityDictionary(entries)


def summarize(tree: CategoryNode, dictionary: TypedEntityDictionary) -> dict:
    nodes = list(tree.walk())
    return {
        "nodes": len(nodes),
        "leaves": sum(1 for n, _ in nodes if n.is_leaf),
        "other_nodes": sum(1 for n, _ in nodes if n.is_other),
        "entities": len(dictionary),
        "max_path_length": max(len(p) for _, p in nodes),
    }
