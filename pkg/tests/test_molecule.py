from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemtyper.molecule import (
    AROMATIC,
    DOUBLE,
    SINGLE,
    UNKNOWN,
    AtomVocab,
    BondVocab,
    BranchError,
    DanglingBondError,
    ElementError,
    RingClosureError,
    parse_smiles,
    to_smiles,
    vocab_index,
)
from chemtyper.synthetic import REAL_MOLECULES, SmilesGenerator


def orders(graph):
    return Counter(b.order for b in graph.bonds)


def test_ethanol_chain():
    g = parse_smiles("CCO")
    assert [a.element for a in g.atoms] == ["C", "C", "O"]
    assert [(b.begin, b.end, b.order) for b in g.bonds] == [(0, 1, SINGLE), (1, 2, SINGLE)]


def test_cyclopropane_triangle():
    g = parse_smiles("C1CC1")
    assert g.num_atoms == 3 and len(g.bonds) == 3
    assert all(g.degree(i) == 2 for i in range(3))
    assert {frozenset(b.endpoints) for b in g.bonds} == {frozenset(p) for p in [(0, 1), (1, 2), (0, 2)]}


def test_ethyl_acetate():
    g = parse_smiles("CCOC(C)=O")
    assert g.num_atoms == 6 and len(g.bonds) == 5
    doubles = [b for b in g.bonds if b.order == DOUBLE]
    assert len(doubles) == 1
    assert {g.atoms[doubles[0].begin].element, g.atoms[doubles[0].end].element} == {"C", "O"}


def test_benzene_is_aromatic():
    g = parse_smiles("c1ccccc1")
    assert all(a.aromatic and a.element == "C" for a in g.atoms)
    assert orders(g) == Counter({AROMATIC: 6})


def test_bracket_atoms():
    g = parse_smiles("[NH4+].[O-]C(=O)[Fe+2]")
    assert (g.atoms[0].element, g.atoms[0].explicit_h, g.atoms[0].formal_charge) == ("N", 4, 1)
    assert g.atoms[1].formal_charge == -1
    assert g.atoms[-1].formal_charge == 2
    assert g.components() == 2


def test_explicit_bond_symbols_and_two_digit_rings():
    g = parse_smiles("C%12CC#CC:C%12")
    assert len(g.bonds) == 6
    assert Counter(b.order for b in g.bonds)["triple"] == 1
    assert Counter(b.order for b in g.bonds)[AROMATIC] == 1


@pytest.mark.parametrize(
    "smiles, error",
    [
        ("C1CC", RingClosureError),
        ("C1CC2CC1", RingClosureError),
        ("C11", RingClosureError),
        ("CC(C", BranchError),
        ("CC)C", BranchError),
        ("C()C", BranchError),
        ("(C)C", BranchError),
        ("CXC", ElementError),
        ("C[Xx]", ElementError),
        ("Q", ElementError),
        ("CC=", DanglingBondError),
        ("C#", DanglingBondError),
        ("CC(=)C", DanglingBondError),
    ],
)
def test_named_parse_errors(smiles, error):
    with pytest.raises(error):
        parse_smiles(smiles)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        parse_smiles("")


def test_adjacency_symmetric():
    g = parse_smiles("OC(=O)c1ccccc1")
    for i in range(g.num_atoms):
        for j in g.neighbors(i):
            assert i in g.neighbors(j)


def test_vocab_index_simple():
    vocab = AtomVocab([("C", False), ("O", False)])
    ig = vocab_index(parse_smiles("CCO"), vocab, BondVocab())
    c, o = vocab.index[("C", False)], vocab.index[("O", False)]
    assert ig.atom_ids == (c, c, o)
    assert UNKNOWN not in ig.atom_ids


def test_vocab_index_aromatic_carbon():
    vocab = AtomVocab.default()
    ig = vocab_index(parse_smiles("c1ccccc1"), vocab, BondVocab())
    assert len(set(ig.atom_ids)) == 1
    assert ig.atom_ids[0] != vocab.index[("C", False)]
    assert len(ig.src) == 12  # six bonds, both directions


def test_vocab_index_unknown_element():
    ig = vocab_index(parse_smiles("[Se]"), AtomVocab.default(), BondVocab())
    assert ig.atom_ids == (UNKNOWN,)


@pytest.mark.parametrize("name, smiles", sorted(REAL_MOLECULES.items()))
def test_real_molecules_round_trip(name, smiles):
    g = parse_smiles(smiles)
    again = parse_smiles(to_smiles(g))
    assert again.signature() == g.signature()
    assert again.components() == g.components()


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generated_counts_and_fixpoint(seed):
    gen = SmilesGenerator(seed).sample()
    g = parse_smiles(gen.smiles)
    assert g.num_atoms == gen.atoms
    assert len(g.bonds) == gen.atoms - gen.components + gen.ring_closures
    assert g.components() == gen.components
    assert parse_smiles(to_smiles(g)).signature() == g.signature()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2**31 - 1))
def test_permutation_preserves_signature(seed, perm_seed):
    g = parse_smiles(SmilesGenerator(seed).sample().smiles)
    perm = list(np.random.default_rng(perm_seed).permutation(g.num_atoms))
    assert g.permuted(perm).signature() == g.signature()


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="CNOcn()=#123[]+-.%Hl", max_size=12))
def test_arbitrary_input_never_crashes(text):
    # any outcome is fine except an exception outside the parse-error family
    try:
        parse_smiles(text)
    except ValueError:
        pass


def test_graph_json_dump():
    g = parse_smiles("C=O")
    assert g.to_json() == {
        "atoms": [{"element": "C", "aromatic": False, "charge": 0}, {"element": "O", "aromatic": False, "charge": 0}],
        "bonds": [[0, 1, "double"]],
    }
