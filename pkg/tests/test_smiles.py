import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgnn import smiles
from mrgnn.graph import AtomNode, BondKind, MolecularGraph, validate
from mrgnn.smiles import (
    DanglingBondError,
    SmilesError,
    SmilesLexError,
    TokenKind,
    UnclosedRingError,
    UnsupportedFeatureError,
    emit,
    parse,
    tokenize,
)

from oracles import isomorphic
from smiles_corpus import MALFORMED, VALID


def kinds(s):
    return [(t.kind, t.symbol or t.ring) for t in tokenize(s)]


def test_tokenize_simple_chain():
    assert kinds("CCO") == [(TokenKind.ORGANIC_ATOM, "C"), (TokenKind.ORGANIC_ATOM, "C"), (TokenKind.ORGANIC_ATOM, "O")]


def test_tokenize_two_letter_symbols_win():
    assert kinds("ClC") == [(TokenKind.ORGANIC_ATOM, "Cl"), (TokenKind.ORGANIC_ATOM, "C")]
    assert [t.symbol for t in tokenize("BrB")] == ["Br", "B"]


def test_tokenize_percent_ring():
    toks = tokenize("C%12C")
    assert [t.kind for t in toks] == [TokenKind.ORGANIC_ATOM, TokenKind.RING_DIGIT, TokenKind.ORGANIC_ATOM]
    assert toks[1].ring == 12


def test_tokens_tile_input():
    s = "CC(=O)Oc1ccc[nH]c1%11.[Fe+2]"
    toks = tokenize(s)
    assert "".join(t.text for t in toks) == s
    assert [t.offset for t in toks] == [sum(len(u.text) for u in toks[:i]) for i in range(len(toks))]


def test_lex_error_carries_offset():
    with pytest.raises(SmilesLexError) as info:
        tokenize("CC?C")
    assert info.value.offset == 2
    assert "byte 2" in str(info.value)


def test_bracket_atom_payload():
    (tok,) = tokenize("[NH4+]")
    assert (tok.symbol, tok.hydrogens, tok.charge) == ("N", 4, 1)
    assert tokenize("[O-2]")[0].charge == -2
    assert tokenize("[Fe++]")[0].charge == 2


@pytest.mark.parametrize("s, n_nodes, n_edges, n_aromatic", VALID)
def test_corpus_counts(s, n_nodes, n_edges, n_aromatic):
    g = parse(s)
    assert (g.num_nodes, g.num_edges, sum(a.aromatic for a in g.atoms)) == (n_nodes, n_edges, n_aromatic)
    assert validate(g) == []


@pytest.mark.parametrize("s, error", MALFORMED)
def test_corpus_errors(s, error):
    with pytest.raises(getattr(smiles, error)):
        parse(s)


def test_acetic_acid_bonds():
    g = parse("CC(=O)O")
    assert [(i, j, k.value) for i, j, k in g.bonds] == [(0, 1, "single"), (1, 2, "double"), (1, 3, "single")]
    assert [a.hydrogens for a in g.atoms] == [3, 0, 0, 1]


def test_hydroquinone_structure():
    g = parse("Oc1ccc(O)cc1")
    assert g.degrees().tolist() == [1, 3, 2, 2, 3, 1, 2, 2]
    ring = [(i, j) for i, j, k in g.bonds if k is BondKind.AROMATIC]
    assert len(ring) == 6
    assert [a.hydrogens for a in g.atoms] == [1, 0, 1, 1, 0, 1, 1, 1]


def test_explicit_single_between_aromatic_atoms():
    g = parse("c1ccc(cc1)-c2ccccc2")
    assert g.bond_kind(3, 6) is BondKind.SINGLE


def test_ring_bond_symbol_at_either_end():
    assert parse("C=1CC1").bond_kind(0, 2) is BondKind.DOUBLE
    assert parse("C1CC=1").bond_kind(0, 2) is BondKind.DOUBLE


def test_dangling_bond_before_close_paren():
    with pytest.raises(DanglingBondError):
        parse("C(=)C")


def test_unclosed_ring_example():
    with pytest.raises(UnclosedRingError):
        parse("C1CC")


@pytest.mark.parametrize("s", ["C/C=C/C", "F\\C=C\\F", "[C@@H](F)(Cl)Br", "[13C]", "[CH4:1]", "C$C", "[*]"])
def test_unsupported_features_are_distinct(s):
    with pytest.raises(UnsupportedFeatureError):
        parse(s)


def test_unsupported_is_not_a_syntax_error():
    assert not issubclass(UnsupportedFeatureError, smiles.SmilesSyntaxError)
    assert issubclass(UnsupportedFeatureError, SmilesError)


@pytest.mark.parametrize("s", [s for s, *_ in VALID])
def test_emit_round_trip_corpus(s):
    g = parse(s)
    back = parse(emit(g))
    if g.num_nodes <= 12:
        assert isomorphic(_adj(g), _labels(g), _adj(back), _labels(back))
    else:
        # too large for the brute-force matcher: compare invariants and emit stability
        assert sorted(zip(_labels(g), map(len, _adj(g)))) == sorted(zip(_labels(back), map(len, _adj(back))))
        assert sorted(k.value for *_, k in g.bonds) == sorted(k.value for *_, k in back.bonds)
        assert emit(back) == emit(parse(emit(back)))


def _adj(g):
    return [list(n) for n in g.adjacency]


def _labels(g):
    # bond kinds enter through the sorted multiset of incident kinds
    return [
        (a.element, a.aromatic, a.formal_charge, a.hydrogens, tuple(sorted(g.bond_kind(i, j).value for j in g.adjacency[i])))
        for i, a in enumerate(g.atoms)
    ]


@st.composite
def random_molecules(draw):
    """Connected graphs of up to 8 atoms with random ring closures."""
    n = draw(st.integers(1, 8))
    elements = draw(st.lists(st.sampled_from(["C", "N", "O", "S", "Cl"]), min_size=n, max_size=n))
    atoms = [AtomNode(e, hydrogens=draw(st.integers(0, 3))) for e in elements]
    bonds = {}
    for i in range(1, n):
        bonds[(draw(st.integers(0, i - 1)), i)] = draw(st.sampled_from([BondKind.SINGLE, BondKind.DOUBLE]))
    for _ in range(draw(st.integers(0, 3))):
        if n < 3:
            break
        i, j = sorted(draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True)))
        bonds.setdefault((i, j), BondKind.SINGLE)
    return MolecularGraph.from_bonds(atoms, [(i, j, k) for (i, j), k in bonds.items()])


@settings(max_examples=150, deadline=None)
@given(g=random_molecules())
def test_emit_parse_is_isomorphic(g):
    back = parse(emit(g))
    assert validate(back) == []
    assert isomorphic(_adj(g), _labels(g), _adj(back), _labels(back))
    # and the round trip is stable from there on
    again = parse(emit(back))
    assert isomorphic(_adj(back), _labels(back), _adj(again), _labels(again))


@settings(max_examples=300, deadline=None)
@given(s=st.text(alphabet="CNOcnos()=#123%[]+-H.Cl", max_size=16))
def test_parse_yields_valid_graph_or_error(s):
    try:
        g = parse(s)
    except SmilesError:
        return
    assert validate(g) == []
    assert g.is_connected()


@settings(max_examples=100, deadline=None)
@given(depth=st.integers(1, 6))
def test_nested_rings_reuse_digits(depth):
    # fused cyclopropanes written with one digit reused after each closure
    s = "C1CC1" + "C1CC1" * depth
    g = parse(s)
    assert g.num_nodes == 3 * (depth + 1)
    assert g.num_edges == 3 * (depth + 1) + depth
    cycle_rank = g.num_edges - g.num_nodes + 1
    assert cycle_rank == depth + 1


def test_percent_and_digit_rings_are_independent():
    g = parse("C%01CC1CC1CC%01")
    assert g.num_edges == g.num_nodes - 1 + 2
    assert np.array_equal(g.adjacency_matrix(), g.adjacency_matrix().T)
