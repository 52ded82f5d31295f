import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgnn.data import (
    DataFormatError,
    FeatureCache,
    GraphCache,
    balance,
    generate_synthetic,
    load_cci,
    load_ddi,
    read_label_map,
    write_label_map,
    write_pairs_tsv,
)
from mrgnn.graph import FeaturizerConfig, featurize
from mrgnn.smiles import parse

from oracles import has_carboxyl, has_ring_hydroxyl


def write(tmp_path, text, name="pairs.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_cci_threshold_rule(tmp_path):
    p = write(tmp_path, "CCO\tCC\t950\nCCO\tCN\t0\nCC\tCO\t500\nCC\tCC\t900\n")
    ds = load_cci(p, 900)
    assert [r.label for r in ds.records] == [1, 0, 1]
    assert ds.metadata["discarded"] == 1 and ds.k == 2
    assert [r.label for r in load_cci(p, 500).records] == [1, 0, 1, 1]


def test_cci_skips_unparseable_and_counts_add_up(tmp_path):
    p = write(tmp_path, "# header comment\nCCO\tC/C=C/C\t999\nCCO\tC1CC\t0\n\nCC\tCC\t0\nCC\tCO\t10\n")
    ds = load_cci(p, 700)
    m = ds.metadata
    assert (m["emitted"], m["skipped"], m["discarded"], m["rows"]) == (1, 2, 1, 4)
    assert m["emitted"] + m["skipped"] + m["discarded"] == m["rows"]


@pytest.mark.parametrize("line", ["CC\tCC\n", "CC\tCC\tx\n", "CC\tCC\t1000\n", "CC\tCC\t5\t6\n"])
def test_malformed_rows_name_the_line(tmp_path, line):
    p = write(tmp_path, "CC\tCO\t0\n" + line)
    with pytest.raises(DataFormatError, match=":2"):
        load_cci(p)


def test_empty_file_is_an_error(tmp_path):
    with pytest.raises(DataFormatError, match="no records"):
        load_ddi(write(tmp_path, ""))


def test_ddi_dense_relabeling(tmp_path):
    p = write(tmp_path, "CC\tCO\t5\nCC\tCN\t17\nCO\tCN\t5\n")
    ds = load_ddi(p)
    assert ds.k == 2 and [r.label for r in ds.records] == [0, 1, 0]
    assert ds.metadata["label_map"] == {"5": 0, "17": 1}
    write_label_map(tmp_path / "map.json", ds.metadata["label_map"])
    assert read_label_map(tmp_path / "map.json") == {"5": 0, "17": 1}


def test_ddi_stereo_row_is_skipped(tmp_path):
    ds = load_ddi(write(tmp_path, "CC\tCO\t1\nF/C=C/F\tCC\t2\n"))
    assert ds.metadata["skipped"] == 1 and len(ds) == 1


@settings(max_examples=50, deadline=None)
@given(rows=st.lists(st.tuples(st.sampled_from(["CC", "CO", "c1ccccc1", "C1CC"]), st.integers(0, 999)), min_size=1, max_size=20),
       threshold=st.sampled_from([700, 800, 900]))
def test_cci_label_partition(tmp_path_factory, rows, threshold):
    p = tmp_path_factory.mktemp("cci") / "p.tsv"
    write_pairs_tsv(p, [("CCN", s, score) for s, score in rows])
    ds = load_cci(p, threshold)
    kept = [(s, score) for s, score in rows if s != "C1CC" and (score == 0 or score >= threshold)]
    assert [r.label for r in ds.records] == [int(score >= threshold) for _, score in kept]
    m = ds.metadata
    assert m["emitted"] + m["skipped"] + m["discarded"] == len(rows)


def test_balance_downsamples_majority(tmp_path):
    p = write(tmp_path, "".join(f"CC\tC{'C' * i}\t{999 if i < 3 else 0}\n" for i in range(10)))
    ds = balance(load_cci(p), seed=0)
    assert sorted(ds.labels.tolist()) == [0, 0, 0, 1, 1, 1]


# --- synthetic task ------------------------------------------------------------------


def test_synthetic_is_balanced_and_deterministic():
    a, b = generate_synthetic(200, seed=4), generate_synthetic(200, seed=4)
    assert a.records == b.records
    assert a.labels.sum() == 100
    assert generate_synthetic(200, seed=5).records != a.records
    with pytest.raises(ValueError):
        generate_synthetic(1, seed=0)


def test_synthetic_labels_match_subgraph_oracle():
    ds = generate_synthetic(400, seed=11)
    for r in ds.records:
        ga, gb = parse(r.smiles_a), parse(r.smiles_b)
        assert 4 <= ga.num_nodes <= 12 and 4 <= gb.num_nodes <= 12
        assert r.label == int(has_carboxyl(ga) and has_ring_hydroxyl(gb)), r


def test_synthetic_negatives_include_near_misses():
    ds = generate_synthetic(400, seed=2)
    neg = [(has_carboxyl(parse(r.smiles_a)), has_ring_hydroxyl(parse(r.smiles_b))) for r in ds.records if r.label == 0]
    assert {(True, False), (False, True), (False, False)} <= set(neg)


def test_oracle_motif_examples():
    assert has_carboxyl(parse("CC(=O)O")) and not has_carboxyl(parse("CC(=O)C"))
    assert has_ring_hydroxyl(parse("Oc1ccccc1")) and not has_ring_hydroxyl(parse("CCO"))
    assert not has_ring_hydroxyl(parse("COc1ccccc1"))


# --- caches --------------------------------------------------------------------------


def test_feature_cache_hits_and_bit_equal_reload(tmp_path):
    ds = generate_synthetic(20, seed=0)
    unique = {s for r in ds.records for s in (r.smiles_a, r.smiles_b)}
    first = FeatureCache(tmp_path)
    first.warm(ds)
    assert first.misses == len(unique) and first.hits == 0
    second = FeatureCache(tmp_path)
    second.warm(ds)
    assert second.misses == 0 and second.hits == len(unique)
    for s in unique:
        assert np.array_equal(second.get(s), featurize(parse(s)))


def test_feature_cache_config_change_refeaturizes(tmp_path):
    ds = generate_synthetic(10, seed=0)
    FeatureCache(tmp_path).warm(ds)
    other = FeatureCache(tmp_path, FeaturizerConfig(output_dim=40))
    other.warm(ds)
    assert other.hits == 0
    assert other.get(ds.records[0].smiles_a).shape[1] == 40


def test_feature_cache_rebuilds_corrupt_entry(tmp_path, caplog):
    cache = FeatureCache(tmp_path)
    X = cache.get("CCO")
    cache.path("CCO").write_bytes(b"garbage")
    fresh = FeatureCache(tmp_path)
    with caplog.at_level("WARNING"):
        Y = fresh.get("CCO")
    assert fresh.misses == 1 and "corrupt" in caplog.text
    assert np.array_equal(X, Y)
    assert cache.path("CCO").read_bytes().startswith(b"MRGNNFC1")


def test_graph_cache_memoizes():
    graphs = GraphCache()
    a = graphs("c1ccccc1O")
    assert graphs("c1ccccc1O") is a
    assert a[1].shape == (7, 75)
