"""SMILES-subset parsing into molecular graphs.

Supported: organic-subset atoms, aromatic lowercase atoms, bracket atoms
with charge and hydrogen count, bonds ``- = # :``, branches, ring closures
(digits and ``%nn``) and ``.`` component separators.  Stereochemistry,
isotopes and wildcards are not part of the grammar.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

# Symbols accepted inside brackets.  Bare (organic subset) atoms are narrower.
ELEMENTS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
    Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba
    La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi
    Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds
    Rg Cn Nh Fl Mc Lv Ts Og""".split()
)
ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = frozenset({"b", "c", "n", "o", "p", "s", "se", "as", "te"})

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)
_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_ORDER_SYMBOL = {v: k for k, v in _BOND_SYMBOLS.items()}


class SmilesError(ValueError):
    """Base class for SMILES syntax errors."""


class RingClosureError(SmilesError):
    pass


class BranchError(SmilesError):
    pass


class ElementError(SmilesError):
    pass


class DanglingBondError(SmilesError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise ElementError(f"unknown element {self.element!r}")


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = SINGLE

    @property
    def endpoints(self) -> tuple[int, int]:
        return self.begin, self.end


@dataclass
class MoleculeGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    adjacency: list[list[tuple[int, int]]] = field(default_factory=list)

    def __post_init__(self):
        if not self.atoms:
            raise SmilesError("a molecule needs at least one atom")
        n = len(self.atoms)
        seen = set()
        adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for k, b in enumerate(self.bonds):
            if b.begin == b.end or not (0 <= b.begin < n and 0 <= b.end < n):
                raise SmilesError(f"invalid bond endpoints {b.endpoints}")
            pair = frozenset(b.endpoints)
            if pair in seen:
                raise SmilesError(f"duplicate bond between atoms {b.endpoints}")
            seen.add(pair)
            adjacency[b.begin].append((b.end, k))
            adjacency[b.end].append((b.begin, k))
        self.adjacency = adjacency

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.adjacency[i]]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def components(self) -> int:
        seen = [False] * self.num_atoms
        count = 0
        for start in range(self.num_atoms):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                i = stack.pop()
                for j in self.neighbors(i):
                    if not seen[j]:
                        seen[j] = True
                        stack.append(j)
        return count

    def signature(self) -> Counter:
        """Multiset of (element, aromatic, charge, degree, sorted bond orders) per atom."""
        sig = Counter()
        for i, atom in enumerate(self.atoms):
            orders = tuple(sorted(self.bonds[k].order for _, k in self.adjacency[i]))
            sig[(atom.element, atom.aromatic, atom.formal_charge, len(orders), orders)] += 1
        return sig

    def permuted(self, perm: list[int]) -> "MoleculeGraph":
        """Relabel atoms so old atom ``i`` becomes new atom ``perm[i]``."""
        atoms = [None] * self.num_atoms
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [Bond(perm[b.begin], perm[b.end], b.order) for b in self.bonds]
        return MoleculeGraph(atoms, bonds)

    def to_json(self) -> dict:
        return {
            "atoms": [
                {"element": a.element, "aromatic": a.aromatic, "charge": a.formal_charge}
                for a in self.atoms
            ],
            "bonds": [[b.begin, b.end, b.order] for b in self.bonds],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------- parser

_BRACKET_RE = re.compile(r"^([A-Z][a-z]?|[a-z][a-z]?)(H\d*)?([+-]+\d*)?$")


def _parse_bracket(body: str) -> Atom:
    m = _BRACKET_RE.match(body)
    if m is None:
        raise ElementError(f"unsupported bracket atom [{body}]")
    symbol, hpart, charge = m.groups()
    aromatic = symbol[0].islower()
    if aromatic:
        if symbol not in AROMATIC_BRACKET:
            raise ElementError(f"unknown aromatic symbol {symbol!r} in [{body}]")
        element = symbol.capitalize()
    else:
        element = symbol
    if element not in ELEMENTS:
        raise ElementError(f"unknown element {symbol!r} in [{body}]")
    h = None
    if hpart is not None:
        h = int(hpart[1:]) if len(hpart) > 1 else 1
    else:
        h = 0
    q = 0
    if charge:
        sign = 1 if charge[0] == "+" else -1
        digits = charge.lstrip("+-")
        if digits:
            if len(charge) - len(digits) != 1:
                raise SmilesError(f"malformed charge in [{body}]")
            q = sign * int(digits)
        else:
            if len(set(charge)) != 1:
                raise SmilesError(f"malformed charge in [{body}]")
            q = sign * len(charge)
    return Atom(element, aromatic, q, h)


def parse_smiles(smiles: str) -> MoleculeGraph:
    """Parse a SMILES string; atoms are numbered in order of appearance."""
    if not isinstance(smiles, str) or not smiles.strip():
        raise SmilesError("empty SMILES string")
    s = smiles.strip()
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    pairs: set[frozenset] = set()
    prev: int | None = None
    pending: str | None = None  # explicit bond symbol waiting for its second atom
    pending_pos = -1
    branches: list[int] = []
    rings: dict[int, tuple[int, str | None]] = {}

    def default_order(i: int, j: int) -> str:
        return AROMATIC if atoms[i].aromatic and atoms[j].aromatic else SINGLE

    def connect(i: int, j: int, order: str, where: int) -> None:
        key = frozenset((i, j))
        if i == j:
            raise RingClosureError(f"ring closure at position {where} bonds an atom to itself")
        if key in pairs:
            raise RingClosureError(f"ring closure at position {where} duplicates an existing bond")
        pairs.add(key)
        bonds.append(Bond(i, j, order))

    def add_atom(atom: Atom) -> None:
        nonlocal prev, pending
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            order = _BOND_SYMBOLS[pending] if pending else default_order(prev, idx)
            connect(prev, idx, order, pos)
        elif pending:
            raise DanglingBondError(f"bond {pending!r} at position {pending_pos} has no left atom")
        pending = None
        prev = idx

    pos = 0
    n = len(s)
    while pos < n:
        ch = s[pos]
        if ch == "[":
            close = s.find("]", pos)
            if close < 0:
                raise ElementError(f"unterminated bracket atom at position {pos}")
            add_atom(_parse_bracket(s[pos + 1 : close]))
            pos = close + 1
        elif ch in "BCNOPSFI":
            two = s[pos : pos + 2]
            if two in ("Cl", "Br"):
                add_atom(Atom(two))
                pos += 2
            else:
                add_atom(Atom(ch))
                pos += 1
        elif ch in AROMATIC_ORGANIC:
            add_atom(Atom(ch.upper(), aromatic=True))
            pos += 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise DanglingBondError(f"two consecutive bond symbols at position {pos}")
            if prev is None:
                raise DanglingBondError(f"bond {ch!r} at position {pos} has no left atom")
            pending, pending_pos = ch, pos
            pos += 1
        elif ch == "(":
            if prev is None:
                raise BranchError(f"branch opened at position {pos} before any atom")
            if pending is not None:
                raise DanglingBondError(f"bond {pending!r} at position {pending_pos} precedes a branch")
            branches.append(prev)
            pos += 1
            if pos < n and s[pos] == ")":
                raise BranchError(f"empty branch at position {pos - 1}")
        elif ch == ")":
            if not branches:
                raise BranchError(f"unmatched ')' at position {pos}")
            if pending is not None:
                raise DanglingBondError(f"bond {pending!r} at position {pending_pos} closes a branch")
            prev = branches.pop()
            pos += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = s[pos + 1 : pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise RingClosureError(f"'%' at position {pos} needs two digits")
                num, width = int(digits), 3
            else:
                num, width = int(ch), 1
            if prev is None:
                raise RingClosureError(f"ring label {num} at position {pos} before any atom")
            if num in rings:
                other, order = rings.pop(num)
                if pending and order and _BOND_SYMBOLS[pending] != order:
                    raise RingClosureError(f"conflicting bond orders for ring label {num}")
                if pending:
                    final = _BOND_SYMBOLS[pending]
                elif order:
                    final = order
                else:
                    final = default_order(other, prev)
                connect(other, prev, final, pos)
            else:
                rings[num] = (prev, _BOND_SYMBOLS[pending] if pending else None)
            pending = None
            pos += width
        elif ch == ".":
            if pending is not None:
                raise DanglingBondError(f"bond {pending!r} at position {pending_pos} precedes '.'")
            if prev is None or pos + 1 >= n:
                raise SmilesError(f"'.' at position {pos} must separate two components")
            if branches:
                raise BranchError(f"'.' at position {pos} inside an open branch")
            prev = None
            pos += 1
        elif ch.isalpha():
            raise ElementError(f"unknown element symbol {ch!r} at position {pos}")
        else:
            raise SmilesError(f"unexpected character {ch!r} at position {pos}")

    if pending is not None:
        raise DanglingBondError(f"trailing bond {pending!r} at position {pending_pos}")
    if branches:
        raise BranchError(f"{len(branches)} unclosed branch(es)")
    if rings:
        raise RingClosureError(f"unmatched ring closure label(s) {sorted(rings)}")
    return MoleculeGraph(atoms, bonds)


# ---------------------------------------------------------------- writer


def _atom_token(atom: Atom) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    plain = atom.formal_charge == 0 and not atom.explicit_h
    if plain and (
        (atom.aromatic and sym in AROMATIC_ORGANIC) or (not atom.aromatic and sym in ORGANIC_SUBSET)
    ):
        return sym
    out = "[" + sym
    if atom.explicit_h:
        out += "H" + (str(atom.explicit_h) if atom.explicit_h > 1 else "")
    q = atom.formal_charge
    if q:
        out += ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
    return out + "]"


def _bond_token(graph: MoleculeGraph, bond: Bond) -> str:
    both = graph.atoms[bond.begin].aromatic and graph.atoms[bond.end].aromatic
    implicit = AROMATIC if both else SINGLE
    return "" if bond.order == implicit else _ORDER_SYMBOL[bond.order]


def _ring_label(num: int) -> str:
    return str(num) if num < 10 else f"%{num:02d}"


def to_smiles(graph: MoleculeGraph) -> str:
    """Write a SMILES string by depth-first traversal from the lowest-index atom.

    Re-parsing the output yields a graph with the same atom signature.
    """
    n = graph.num_atoms
    visited = [False] * n
    children: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n)}
    tree_bonds: set[int] = set()
    roots: list[int] = []

    for root in range(n):
        if visited[root]:
            continue
        roots.append(root)
        visited[root] = True
        stack = [(root, iter(sorted(graph.adjacency[root])))]
        while stack:
            i, it = stack[-1]
            for j, k in it:
                if not visited[j]:
                    visited[j] = True
                    tree_bonds.add(k)
                    children[i].append((j, k))
                    stack.append((j, iter(sorted(graph.adjacency[j]))))
                    break
            else:
                stack.pop()

    ring_by_atom: dict[int, list[int]] = {i: [] for i in range(n)}
    for k, b in enumerate(graph.bonds):
        if k not in tree_bonds:
            ring_by_atom[b.begin].append(k)
            ring_by_atom[b.end].append(k)

    labels: dict[int, int] = {}
    free: list[int] = list(range(1, 100))
    parts: list[str] = []
    for idx, root in enumerate(roots):
        if idx:
            parts.append(".")
        stack: list[tuple] = [("atom", root, -1)]
        while stack:
            item = stack.pop()
            if item[0] == "open":
                parts.append("(")
                continue
            if item[0] == "close":
                parts.append(")")
                continue
            _, i, k = item
            if k >= 0:
                parts.append(_bond_token(graph, graph.bonds[k]))
            parts.append(_atom_token(graph.atoms[i]))
            for rk in sorted(ring_by_atom[i]):
                if rk in labels:
                    lab = labels.pop(rk)
                    parts.append(_bond_token(graph, graph.bonds[rk]) + _ring_label(lab))
                    free.append(lab)
                    free.sort()
                else:
                    if not free:
                        raise ValueError("more than 99 simultaneously open rings")
                    lab = free.pop(0)
                    labels[rk] = lab
                    parts.append(_ring_label(lab))
            kids = children[i]
            # first child is emitted first; every child except the last becomes a branch
            for pos in range(len(kids) - 1, -1, -1):
                j, kb = kids[pos]
                if pos == len(kids) - 1:
                    stack.append(("atom", j, kb))
                else:
                    stack += [("close",), ("atom", j, kb), ("open",)]
    return "".join(parts)


# ---------------------------------------------------------------- vocabularies

UNKNOWN = 0


class AtomVocab:
    """Maps (element, aromatic) to an index; index 0 is reserved for unknown types."""

    def __init__(self, keys=()):
        self.index: dict[tuple[str, bool], int] = {}
        for key in keys:
            self.add(key)

    @classmethod
    def default(cls, graphs=()) -> "AtomVocab":
        vocab = cls((el, False) for el in ORGANIC_SUBSET)
        for sym in AROMATIC_ORGANIC:
            vocab.add((sym.upper(), True))
        for g in graphs:
            for a in g.atoms:
                vocab.add((a.element, a.aromatic))
        return vocab

    def add(self, key: tuple[str, bool]) -> int:
        key = (key[0], bool(key[1]))
        if key not in self.index:
            self.index[key] = len(self.index) + 1
        return self.index[key]

    def __len__(self) -> int:
        return len(self.index) + 1

    def lookup(self, atom: Atom) -> int:
        return self.index.get((atom.element, atom.aromatic), UNKNOWN)

    def to_json(self) -> list:
        return [[el, ar] for (el, ar), _ in sorted(self.index.items(), key=lambda kv: kv[1])]

    @classmethod
    def from_json(cls, items) -> "AtomVocab":
        return cls((el, ar) for el, ar in items)


class BondVocab:
    def __init__(self, orders=BOND_ORDERS):
        self.index = {o: i + 1 for i, o in enumerate(orders)}

    def __len__(self) -> int:
        return len(self.index) + 1

    def lookup(self, bond: Bond) -> int:
        return self.index.get(bond.order, UNKNOWN)


@dataclass(frozen=True)
class IndexedGraph:
    """Integer view of a molecule for the graph encoder.

    ``src``/``dst``/``edge_types`` list each bond twice, once per direction,
    so message passing sums over ``src -> dst``.
    """

    atom_ids: tuple[int, ...]
    src: tuple[int, ...]
    dst: tuple[int, ...]
    edge_types: tuple[int, ...]

    @property
    def num_atoms(self) -> int:
        return len(self.atom_ids)


def vocab_index(graph: MoleculeGraph, atom_vocab: AtomVocab, bond_vocab: BondVocab) -> IndexedGraph:
    atom_ids = tuple(atom_vocab.lookup(a) for a in graph.atoms)
    src, dst, types = [], [], []
    for b in graph.bonds:
        t = bond_vocab.lookup(b)
        src += [b.begin, b.end]
        dst += [b.end, b.begin]
        types += [t, t]
    return IndexedGraph(atom_ids, tuple(src), tuple(dst), tuple(types))
