"""Deterministic synthetic data: SMILES strings and a controlled typing corpus.

The SMILES generator builds strings from its own small grammar and never
calls the parser, so it can serve as an independent source of test input.

The learnability corpus assigns gold types as a fixed function of two
independent hidden bits: whether the structure contains an aromatic ring
and whether the description contains a keyword.  Mention names are unique
and sentence templates carry no type information, so only the definition
modalities can explain the labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chemtyper.labeler import AnnotatedSentence, MentionSpan, tokenize
from chemtyper.ontology import FineGrainedType, LabelSpace
from chemtyper.resolver import ChemRecord, FixtureStore

# ---------------------------------------------------------------- SMILES

REAL_MOLECULES = {
    "water": "O",
    "methane": "C",
    "ethanol": "CCO",
    "methanol": "CO",
    "acetone": "CC(C)=O",
    "ethyl acetate": "CCOC(C)=O",
    "acetic acid": "CC(=O)O",
    "benzoic acid": "OC(=O)c1ccccc1",
    "benzene": "c1ccccc1",
    "toluene": "Cc1ccccc1",
    "phenol": "Oc1ccccc1",
    "pyridine": "c1ccncc1",
    "furan": "c1ccoc1",
    "thiophene": "c1ccsc1",
    "pyrrole": "c1cc[nH]c1",
    "naphthalene": "c1ccc2ccccc2c1",
    "cyclohexane": "C1CCCCC1",
    "tetrahydrofuran": "C1CCOC1",
    "dichloromethane": "ClCCl",
    "chloroform": "ClC(Cl)Cl",
    "hexane": "CCCCCC",
    "ethylene": "C=C",
    "acetylene": "C#C",
    "acetonitrile": "CC#N",
    "dimethylformamide": "CN(C)C=O",
    "dimethyl sulfoxide": "CS(C)=O",
    "thionyl chloride": "O=S(Cl)Cl",
    "sulfuric acid": "OS(=O)(=O)O",
    "sodium chloride": "[Na+].[Cl-]",
    "potassium carbonate": "[K+].[K+].[O-]C([O-])=O",
    "ammonium": "[NH4+]",
    "urea": "NC(N)=O",
    "triphenylphosphine": "c1ccc(cc1)P(c2ccccc2)c3ccccc3",
    "phenylboronic acid": "OB(O)c1ccccc1",
    "bromobenzene": "Brc1ccccc1",
    "iodobenzene": "Ic1ccccc1",
    "biphenyl": "c1ccc(cc1)-c2ccccc2",
    "aspirin": "CC(=O)Oc1ccccc1C(=O)O",
    "caffeine": "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "ibuprofen": "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "glucose": "OCC1OC(O)C(O)C(O)C1O",
    "cubane": "C12C3C4C1C5C2C3C45",
    "adamantane": "C1C2CC3CC1CC(C2)C3",
    "sodium acetate": "CC(=O)[O-].[Na+]",
    "nitrobenzene": "[O-][N+](=O)c1ccccc1",
    "hydrogen cyanide": "C#N",
    "ethyl bromide": "CCBr",
    "styrene": "C=Cc1ccccc1",
    "anisole": "COc1ccccc1",
    "macrocycle with two-digit ring label": "C%10CCCCCCCCCCC%10",
}

_ORGANIC = ["C", "C", "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B"]
_TERMINAL = {"F", "Cl", "Br", "I"}
_BRACKETS = ["[NH4+]", "[O-]", "[Na+]", "[Se]", "[nH]", "[Fe+2]", "[Cu]", "[N+]", "[OH-]", "[SiH4]"]
_AROMATIC_RINGS = ["c1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1", "c1cnccn1"]


@dataclass(frozen=True)
class GeneratedSmiles:
    """A generated string with atom, ring and component counts tallied by the generator."""

    smiles: str
    atoms: int
    ring_closures: int
    components: int


class SmilesGenerator:
    """Random SMILES from a grammar that mirrors the supported subset.

    Counts are tracked while the string is built, so callers can check a
    parser's atom and bond totals without trusting the parser.
    """

    def __init__(self, seed: int = 0, max_atoms: int = 14):
        self.rng = np.random.default_rng(seed)
        self.max_atoms = max_atoms

    def _fresh_label(self) -> str:
        # labels are never reused within one string, so nested branches cannot collide
        self._label += 1
        return str(self._label) if self._label < 10 else f"%{self._label}"

    def _chain(self, budget: int, depth: int) -> tuple[str, int, int]:
        """A chain of up to ``budget`` backbone atoms with optional branches and one ring."""
        rng = self.rng
        n = int(rng.integers(1, budget + 1))
        out: list[str] = []
        atoms = rings = 0
        ring_open: tuple[str, int] | None = None  # (label, backbone position)
        for i in range(n):
            last = i == n - 1
            sym = str(rng.choice(_ORGANIC))
            if sym in _TERMINAL and (not last or ring_open is not None):
                sym = "C"
            if i > 0:
                out.append("" if sym in _TERMINAL else str(rng.choice(["", "", "", "-", "="])))
            out.append(sym)
            atoms += 1
            if sym in _TERMINAL:
                continue
            if ring_open is None and i <= n - 3 and rng.random() < 0.3:
                ring_open = (self._fresh_label(), i)
                out.append(ring_open[0])
            elif ring_open is not None and i - ring_open[1] >= 2 and rng.random() < 0.5:
                out.append(ring_open[0])
                ring_open = None
                rings += 1
            if depth < 2 and not last and rng.random() < 0.25:
                sub, a, r = self._chain(max(1, budget // 3), depth + 1)
                out.append(f"({sub})")
                atoms += a
                rings += r
        if ring_open is not None:
            if n - 1 - ring_open[1] >= 2:
                out.append(ring_open[0])
            else:
                # close through one extra atom so the closure never doubles a chain bond
                out.append(f"C{ring_open[0]}" if n - 1 - ring_open[1] == 1 else f"CC{ring_open[0]}")
                atoms += 1 if n - 1 - ring_open[1] == 1 else 2
            rings += 1
        return "".join(out), atoms, rings

    def sample(self) -> GeneratedSmiles:
        rng = self.rng
        parts, atoms, rings = [], 0, 0
        self._label = 1  # label 1 is taken by the aromatic ring templates
        components = 1 + int(rng.random() < 0.1)
        for _ in range(components):
            kind = rng.random()
            if kind < 0.25:
                ring = str(rng.choice(_AROMATIC_RINGS))
                n_ring_atoms = sum(ch.isalpha() for ch in ring)
                tail, a, r = self._chain(4, 1)
                parts.append(ring + tail)
                atoms += n_ring_atoms + a
                rings += 1 + r
            elif kind < 0.35:
                parts.append(str(rng.choice(_BRACKETS)))
                atoms += 1
            else:
                s, a, r = self._chain(self.max_atoms, 0)
                parts.append(s)
                atoms += a
                rings += r
        return GeneratedSmiles(".".join(parts), atoms, rings, components)

    def batch(self, n: int) -> list[GeneratedSmiles]:
        return [self.sample() for _ in range(n)]


def smiles_fixture(n: int = 200, seed: int = 7) -> list[tuple[str, str]]:
    """``n`` (name, SMILES) pairs: every real molecule, topped up with generated ones."""
    rows = list(REAL_MOLECULES.items())
    gen = SmilesGenerator(seed)
    k = 0
    while len(rows) < n:
        rows.append((f"generated-{k:03d}", gen.sample().smiles))
        k += 1
    return rows[:n]


# ---------------------------------------------------------------- learnability corpus

MOTIF_TYPE = FineGrainedType(("Synthetic", "Aromatic"))
KEYWORD_TYPE = FineGrainedType(("Synthetic", "Volatile"))
OTHER_TYPE = FineGrainedType(("Synthetic", "Other Synthetic"))
KEYWORD = "volatile"

_AROMATIC_CORES = ["c1ccccc1", "c1ccncc1", "c1ccsc1", "c1ccoc1", "c1ccc2ccccc2c1"]
_ALIPHATIC_CORES = ["C1CCCCC1", "C1CCOC1", "C1CCNCC1", "CCCCCC", "C1CC1", "CC(C)CC"]
_SUBSTITUENTS = ["", "C", "CC", "O", "N", "Cl", "Br", "F", "OC", "C(=O)O", "C#N", "CO"]
_FILLER = (
    "a compound that is often used as reagent in synthesis and stored in glass bottles "
    "it appears as solid or liquid with mild odor soluble in water or ether common laboratory material"
).split()
_TEMPLATES = [
    "To the flask containing {m} was added the base .",
    "The {m} was stirred at room temperature for two hours .",
    "After filtration , {m} was washed and dried under vacuum .",
    "A sample of {m} was analyzed by chromatography .",
    "We then heated {m} to reflux overnight .",
    "The crude {m} was purified on silica .",
]


@dataclass
class LearnabilityCorpus:
    train: list[AnnotatedSentence]
    test: list[AnnotatedSentence]
    store: FixtureStore
    label_space: LabelSpace


def _mention_name(rng: np.random.Generator, k: int) -> str:
    letters = "".join(rng.choice(list("bdfgkmpqrtvxz"), size=4))
    return f"{letters}-{k}"


def labels_for(has_motif: bool, has_keyword: bool) -> frozenset[str]:
    labels = set()
    if has_motif:
        labels.add(str(MOTIF_TYPE))
    if has_keyword:
        labels.add(str(KEYWORD_TYPE))
    return frozenset(labels or {str(OTHER_TYPE)})


def learnability_corpus(n: int = 200, n_test: int = 40, seed: int = 0) -> LearnabilityCorpus:
    """One mention per sentence; hidden bits drawn independently and balanced."""
    rng = np.random.default_rng(seed)
    bits = [(i % 2 == 1, (i // 2) % 2 == 1) for i in range(n)]
    order = rng.permutation(n)
    sentences, records = [], []
    for k, idx in enumerate(order):
        has_motif, has_kw = bits[idx]
        name = _mention_name(rng, k)
        core = str(rng.choice(_AROMATIC_CORES if has_motif else _ALIPHATIC_CORES))
        smiles = str(rng.choice(_SUBSTITUENTS)) + core + str(rng.choice(_SUBSTITUENTS))
        words = list(rng.choice(_FILLER, size=int(rng.integers(6, 11))))
        if has_kw:
            words.insert(int(rng.integers(0, len(words) + 1)), KEYWORD)
        records.append(ChemRecord(name, smiles, " ".join(words) + " ."))
        text = str(rng.choice(_TEMPLATES)).format(m=name)
        tokens = tokenize(text)
        pos = next(i for i, t in enumerate(tokens) if t.surface == name)
        mention = MentionSpan(pos, pos + 1, name, labels_for(has_motif, has_kw))
        sentences.append(AnnotatedSentence(f"syn-{k:03d}", text, tokens, [mention]))
    space = LabelSpace([MOTIF_TYPE, KEYWORD_TYPE, OTHER_TYPE])
    return LearnabilityCorpus(sentences[n_test:], sentences[:n_test], FixtureStore(records), space)
