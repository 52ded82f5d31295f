import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgnn.graph import (
    AtomNode,
    BondKind,
    FeaturizerConfig,
    FeaturizerConfigError,
    MolecularGraph,
    degree_bucket,
    featurize,
    validate,
)
from mrgnn.smiles import parse

from smiles_corpus import VALID


def kinds_of(graph):
    return {v.kind for v in validate(graph)}


def test_single_atom_is_valid():
    assert validate(MolecularGraph.from_bonds([AtomNode("C")], [])) == []


def test_asymmetric_adjacency_is_reported():
    g = MolecularGraph((AtomNode("C"), AtomNode("O")), ((0, 1, BondKind.SINGLE),), ((1,), ()))
    assert "symmetry" in kinds_of(g)


def test_duplicate_bond_is_reported():
    g = MolecularGraph(
        (AtomNode("C"), AtomNode("O")), ((0, 1, BondKind.SINGLE), (0, 1, BondKind.SINGLE)), ((1,), (0,))
    )
    assert "duplicate-edge" in kinds_of(g)


def test_other_violations():
    assert "empty" in kinds_of(MolecularGraph((), (), ()))
    assert "self-loop" in kinds_of(MolecularGraph((AtomNode("C"),), ((0, 0, BondKind.SINGLE),), ((0,),)))
    assert "index" in kinds_of(MolecularGraph((AtomNode("C"),), ((0, 3, BondKind.SINGLE),), ((),)))
    assert "hydrogens" in kinds_of(MolecularGraph.from_bonds([AtomNode("C", hydrogens=-1)], []))
    assert "adjacency-size" in kinds_of(MolecularGraph((AtomNode("C"),), (), ((), ())))


def test_degree_matches_adjacency():
    g = parse("CC(C)(C)C")
    assert g.degrees().tolist() == [1, 4, 1, 1, 1]
    assert [g.degree(i) for i in range(5)] == [len(n) for n in g.adjacency]


@pytest.mark.parametrize("d, d_max, expected", [(3, 10, 3), (17, 10, 10), (0, 10, 0)])
def test_degree_bucket(d, d_max, expected):
    assert degree_bucket(d, d_max) == expected


def test_default_intrinsic_width_and_offsets():
    cfg = FeaturizerConfig()
    assert cfg.intrinsic_dim == 35
    assert cfg.offsets() == {"element": 0, "degree": 17, "charge": 24, "aromatic": 29, "hydrogens": 30}


def test_methane_row_by_layout():
    X = featurize(parse("C"))
    expected = np.zeros(75)
    expected[0] = 1  # element C
    expected[17 + 0] = 1  # degree 0
    expected[24 + 2] = 1  # charge 0 in -2..2
    expected[30 + 4] = 1  # four implicit hydrogens
    np.testing.assert_array_equal(X, expected[None, :])


def test_unknown_element_goes_to_other_slot():
    g = MolecularGraph.from_bonds([AtomNode("Xx")], [])
    X = featurize(g)
    assert X[0, 16] == 1 and X[0, :16].sum() == 0


def test_aromatic_lowercase_maps_to_element_slot():
    X = featurize(parse("c1ccccc1"))
    assert np.all(X[:, 0] == 1) and np.all(X[:, 29] == 1)


def test_charge_and_hydrogen_clipping():
    g = MolecularGraph.from_bonds([AtomNode("N", formal_charge=5, hydrogens=9)], [])
    X = featurize(g)
    assert X[0, 24 + 4] == 1 and X[0, 30 + 4] == 1


def test_output_dim_below_intrinsic_is_config_error():
    with pytest.raises(FeaturizerConfigError, match="35"):
        featurize(parse("C"), FeaturizerConfig(output_dim=20))


def test_config_round_trip_and_digest():
    cfg = FeaturizerConfig(output_dim=40)
    assert FeaturizerConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() != FeaturizerConfig().digest()


def test_json_interchange_round_trip():
    g = parse("C[N+](C)(C)c1ccccc1")
    back = MolecularGraph.from_json(g.to_json())
    assert back == g
    assert set(json.loads(g.to_json())["atoms"][1]) == {"element", "charge", "aromatic", "h"}


@pytest.mark.parametrize("s", [s for s, *_ in VALID])
def test_rows_are_one_hot_per_group(s):
    cfg = FeaturizerConfig()
    X = featurize(parse(s), cfg)
    off = cfg.offsets()
    assert set(np.unique(X)) <= {0.0, 1.0}
    for lo, hi in [(0, off["degree"]), (off["degree"], off["charge"]), (off["charge"], off["aromatic"]),
                   (off["hydrogens"], cfg.intrinsic_dim)]:
        np.testing.assert_array_equal(X[:, lo:hi].sum(axis=1), 1.0)
    assert not X[:, cfg.intrinsic_dim:].any()


@settings(max_examples=100, deadline=None)
@given(idx=st.integers(0, len(VALID) - 1), data=st.data())
def test_featurize_commutes_with_relabeling(idx, data):
    g = parse(VALID[idx][0])
    perm = data.draw(st.permutations(range(g.num_nodes)))
    h = g.permuted(perm)
    assert validate(h) == []
    X, Y = featurize(g), featurize(h)
    # new row perm[i] is old row i
    np.testing.assert_array_equal(Y[np.array(perm)], X)
