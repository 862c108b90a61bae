import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemtyper.encoders import (
    CLS,
    MASK,
    SEP,
    CrossModalFusion,
    EncodedDescription,
    EncoderConfig,
    GraphEncoder,
    TextEncoder,
    Vocab,
    context_input,
)
from chemtyper.errors import ContractError
from chemtyper.labeler import AnnotatedSentence, MentionSpan, tokenize
from chemtyper.molecule import AtomVocab, BondVocab, IndexedGraph, parse_smiles, vocab_index
from chemtyper.synthetic import REAL_MOLECULES
from chemtyper.tensor import ParamStore, Tensor
from oracle import plain, ref_gin, ref_layer, ref_text

# ---------------------------------------------------------------- fixtures

WORDS = "the benzoic acid was dissolved in water xyzchem-42 and stirred".split()


@pytest.fixture
def tiny():
    cfg = EncoderConfig(d=4, text_layers=1, heads=2, gin_layers=1, max_len=16, max_desc_len=16)
    vocab = Vocab(WORDS)
    store = ParamStore()
    enc = TextEncoder(store, vocab, cfg, np.random.default_rng(3))
    return cfg, vocab, store, enc


def sentence(text, start, end):
    toks = tokenize(text)
    surface = " ".join(t.surface for t in toks[start:end])
    return AnnotatedSentence("s", text, toks, [MentionSpan(start, end, surface, frozenset())])


# ---------------------------------------------------------------- text encoder


def test_context_mention_matches_oracle(tiny):
    cfg, vocab, store, enc = tiny
    s = sentence("the benzoic acid was dissolved in water", 1, 3)
    out = enc.encode_context(s, s.mentions[0])
    marked = vocab.ids([CLS, "the", "*", "benzoic", "acid", "*", "was", "dissolved", "in", "water", SEP])
    masked = vocab.ids([CLS, "the", MASK, "was", "dissolved", "in", "water", SEP])
    p = plain(store)
    np.testing.assert_allclose(out.m.data, ref_text(marked, p, 1, 2)[2], atol=1e-12)
    np.testing.assert_allclose(out.m_mask.data, ref_text(masked, p, 1, 2)[2], atol=1e-12)
    assert out.m_l.shape == (2 * cfg.d,)
    np.testing.assert_array_equal(out.m_l.data, np.concatenate([out.m.data, out.m_mask.data]))


def test_mask_embedding_ignores_mention_surface(tiny):
    _, _, _, enc = tiny
    a = sentence("the benzoic acid was dissolved in water", 1, 3)
    b = sentence("the xyzchem-42 was dissolved in water", 1, 2)
    ea, eb = enc.encode_context(a, a.mentions[0]), enc.encode_context(b, b.mentions[0])
    assert np.array_equal(ea.m_mask.data, eb.m_mask.data)
    assert not np.allclose(ea.m.data, eb.m.data)


def test_single_token_sentence_masked_variant(tiny):
    _, vocab, _, _ = tiny
    ctx = context_input(["water"], 0, 1, vocab, 16)
    assert ctx.masked == tuple(vocab.ids([CLS, MASK, SEP]))
    assert ctx.marked == tuple(vocab.ids([CLS, "*", "water", "*", SEP]))
    assert ctx.mask_pos == ctx.marker_pos == 1


def test_long_sentence_truncated_from_right(tiny):
    _, vocab, _, _ = tiny
    words = WORDS * 3
    ctx = context_input(words, 1, 3, vocab, 10)
    assert len(ctx.marked) == len(ctx.masked) == 10
    assert ctx.marked[0] == vocab.id(CLS) and ctx.marked[-1] == vocab.id(SEP)
    assert ctx.marked[:6] == tuple(vocab.ids([CLS, "the", "*", "benzoic", "acid", "*"]))


def test_mention_past_window_is_contract_error(tiny):
    _, vocab, _, _ = tiny
    with pytest.raises(ContractError):
        context_input(WORDS * 3, 20, 21, vocab, 10)
    with pytest.raises(ContractError):
        context_input(WORDS, 5, 50, vocab, 64)


def test_description_rows_and_cls(tiny):
    cfg, vocab, store, enc = tiny
    desc = enc.encode_description("benzoic acid in water")
    ids = vocab.ids([CLS, "benzoic", "acid", "in", "water", SEP])
    ref = ref_text(ids, plain(store), 1, 2)
    assert desc.rows.shape == (4, cfg.d)
    np.testing.assert_allclose(desc.rows.data, ref[1:-1], atol=1e-12)
    np.testing.assert_allclose(desc.d_cls.data, ref[0], atol=1e-12)


def test_vocab_file_round_trip(tmp_path, tiny):
    _, vocab, _, _ = tiny
    vocab.save(tmp_path / "vocab.txt")
    again = Vocab.load(tmp_path / "vocab.txt")
    assert again.tokens == vocab.tokens
    assert again.id("Benzoic") == vocab.id("benzoic")
    (tmp_path / "bad.txt").write_text("just\nwords\n")
    with pytest.raises(ContractError):
        Vocab.load(tmp_path / "bad.txt")


def test_external_token_embeddings(tmp_path, tiny):
    _, vocab, store, enc = tiny
    (tmp_path / "emb.txt").write_text("water 1 2 3 4\nunseen 0 0 0 0\nshort 1 2\n")
    assert enc.load_token_embeddings(tmp_path / "emb.txt") == 1
    np.testing.assert_array_equal(store["text.tok_emb"].data[vocab.id("water")], [1, 2, 3, 4])


def test_heads_must_divide_width():
    with pytest.raises(ContractError):
        EncoderConfig(d=30, heads=4)


# ---------------------------------------------------------------- graph encoder


def graph_encoder(d, layers=1, epsilon=0.0, n_atoms=4, n_bonds=3, seed=0):
    cfg = EncoderConfig(d=d, heads=1, gin_layers=layers, epsilon=epsilon)
    store = ParamStore()
    return store, GraphEncoder(store, n_atoms, n_bonds, cfg, np.random.default_rng(seed))


def test_gin_two_node_hand_computation():
    store, enc = graph_encoder(2, epsilon=0.1)
    store["gin.atom_emb"].data[:] = [[1.0, 0.0], [0.0, 1.0], [0, 0], [0, 0]]
    store["gin.bond_emb"].data[:] = [[0, 0], [0.5, 0.5], [0, 0]]
    store["gin.layer0.ff1.w"].data[:] = [[1, 0, 0, 0], [0, 1, 0, 0]]
    store["gin.layer0.ff1.b"].data[:] = 0.0
    store["gin.layer0.ff2.w"].data[:] = [[1, 0], [0, 1], [0, 0], [0, 0]]
    store["gin.layer0.ff2.b"].data[:] = [0.1, -0.1]
    graph = IndexedGraph((0, 1), (0, 1), (1, 0), (1, 1))
    out = enc(graph)
    # atom 0: 1.1*[1,0] + [0,1] + [0.5,0.5] = [1.6, 1.5] -> tanh -> + bias
    np.testing.assert_allclose(out.nodes.data[0], [1.0216685544064714, 0.8051482536448664], atol=1e-15)
    assert out.nodes.shape == (2, 2) and len(out.layers) == 2


def test_gin_zero_weights_give_zero_nodes():
    store, enc = graph_encoder(3)
    for name in ("ff1.w", "ff1.b", "ff2.w", "ff2.b"):
        store[f"gin.layer0.{name}"].data[:] = 0.0
    out = enc(IndexedGraph((1,), (), (), ()))
    np.testing.assert_array_equal(out.nodes.data, np.zeros((1, 3)))


def test_gin_empty_graph_is_contract_error():
    _, enc = graph_encoder(2)
    with pytest.raises(ContractError):
        enc(IndexedGraph((), (), (), ()))


def test_gin_matches_per_atom_loop():
    store, enc = graph_encoder(4, layers=2, epsilon=0.3, n_atoms=len(AtomVocab.default()), n_bonds=5)
    graph = vocab_index(parse_smiles("CC(=O)Oc1ccccc1"), AtomVocab.default(), BondVocab())
    expected = ref_gin(graph, plain(store), 2, 0.3)
    np.testing.assert_allclose(enc(graph).nodes.data, expected, atol=1e-12)


def test_ccO_permutation_leaves_pooled_graph_unchanged():
    store, enc = graph_encoder(8, layers=3, n_atoms=len(AtomVocab.default()), n_bonds=5)
    vocab = AtomVocab.default()
    mol = parse_smiles("CCO")
    base = enc(vocab_index(mol, vocab, BondVocab())).nodes.data.mean(axis=0)
    for perm in ([2, 1, 0], [1, 2, 0], [0, 2, 1]):
        other = enc(vocab_index(mol.permuted(perm), vocab, BondVocab())).nodes.data.mean(axis=0)
        np.testing.assert_allclose(other, base, atol=1e-9, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(REAL_MOLECULES.values())), st.randoms(use_true_random=False))
def test_graph_pooling_invariant_to_relabeling(smiles, rnd):
    store, enc = graph_encoder(8, layers=2, epsilon=0.2, n_atoms=len(AtomVocab.default()), n_bonds=5)
    vocab = AtomVocab.default()
    mol = parse_smiles(smiles)
    perm = list(range(mol.num_atoms))
    rnd.shuffle(perm)
    a = enc(vocab_index(mol, vocab, BondVocab())).nodes.data.mean(axis=0)
    b = enc(vocab_index(mol.permuted(perm), vocab, BondVocab())).nodes.data.mean(axis=0)
    assert np.max(np.abs(a - b)) < 1e-9


# ---------------------------------------------------------------- fusion


def fusion(d=4, heads=2, seed=5):
    cfg = EncoderConfig(d=d, heads=heads)
    store = ParamStore()
    return store, CrossModalFusion(store, cfg, np.random.default_rng(seed))


def description(rows, cls):
    return EncodedDescription(Tensor(np.asarray(rows, float)), Tensor(np.asarray(cls, float)))


def test_fusion_matches_oracle():
    store, fuse = fusion()
    rng = np.random.default_rng(11)
    nodes, rows, cls = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=4)
    out = fuse(Tensor(nodes), description(rows, cls))
    expected = ref_layer(np.vstack([nodes, rows]), plain(store), "fusion.layer", 2).mean(axis=0)
    np.testing.assert_allclose(out.f_cm.data, expected, atol=1e-12)
    np.testing.assert_allclose(out.f_g.data, nodes.mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(out.d_cls.data, cls)
    assert out.f.shape == (12,)
    np.testing.assert_array_equal(out.f.data, np.concatenate([out.f_cm.data, out.f_g.data, cls]))


def test_fusion_identical_rows():
    store, fuse = fusion()
    r = np.array([0.3, -1.0, 2.0, 0.5])
    out = fuse(Tensor(r[None, :]), description([r], r))
    single = ref_layer(np.vstack([r, r]), plain(store), "fusion.layer", 2)
    np.testing.assert_allclose(single[0], single[1], atol=1e-15)
    np.testing.assert_allclose(out.f_cm.data, single[0], atol=1e-12)


def test_fusion_node_order_invariance():
    _, fuse = fusion(d=8, heads=4)
    rng = np.random.default_rng(2)
    nodes, rows, cls = rng.normal(size=(6, 8)), rng.normal(size=(3, 8)), rng.normal(size=8)
    base = fuse(Tensor(nodes), description(rows, cls)).f_cm.data
    for _ in range(20):
        perm = rng.permutation(6)
        out = fuse(Tensor(nodes[perm]), description(rows, cls)).f_cm.data
        assert np.max(np.abs(out - base)) < 1e-9


def test_fusion_width_mismatch():
    _, fuse = fusion()
    with pytest.raises(ContractError):
        fuse(Tensor(np.zeros((2, 4))), description(np.zeros((2, 3)), np.zeros(3)))
