import numpy as np
import pytest

from conftest import make_graph, make_table
from plantsearch.ann import build_index, knn
from plantsearch.triplets import (
    NegKind,
    SamplingParams,
    Triplet,
    TripletSet,
    band_sample,
    filtered_random_sample,
    load_triplets,
    sample_triplets,
    save_triplets,
)


def test_band_positions_worked_example():
    neighbors = [f"n{i}" for i in range(1, 13)]  # n1 nearest ... n12
    assert band_sample(neighbors, k=10, c=3) == ["n8", "n9", "n10"]
    assert band_sample(neighbors, k=1, c=1) == ["n1"]
    assert band_sample(neighbors, k=12, c=2) == ["n11", "n12"]
    assert band_sample(neighbors, k=5, c=5) == ["n1", "n2", "n3", "n4", "n5"]


def test_band_sample_validation():
    neighbors = list("abcdef")
    with pytest.raises(ValueError):
        band_sample(neighbors, k=3, c=0)
    with pytest.raises(ValueError):
        band_sample(neighbors, k=3, c=4)
    with pytest.raises(ValueError):
        band_sample(neighbors, k=7, c=1)  # list too short


def test_default_params_bands_disjoint():
    p = SamplingParams()
    p.validate()
    pos = set(range(p.k_pos - p.c_pos + 1, p.k_pos + 1))
    hard = set(range(p.k_hard - p.c_hard + 1, p.k_hard + 1))
    assert pos == {1, 2}
    assert hard == {50}
    assert not pos & hard


def test_params_validation():
    for bad in (
        {"k_pos": 0},
        {"c_pos": 0},
        {"c_pos": 3},  # c > k
        {"c_easy": 0},
        {"min_text_chars": -1},
        {"k_pos": 50},  # collides with the hard band at k_hard=50
        {"k_hard": 2, "c_hard": 1},  # hard band would overlap positives
    ):
        with pytest.raises(ValueError):
            SamplingParams(**bad).validate()
    SamplingParams(k_pos=2, c_pos=2, k_hard=3, c_hard=1).validate()


def test_filtered_random_sample_excludes_and_is_uniform():
    rng = np.random.default_rng(0)
    corpus = [f"d{i}" for i in range(10)]
    excluded = {"d0", "d1", "d2"}
    counts = {c: 0 for c in corpus}
    for _ in range(2000):
        picks = filtered_random_sample(corpus, excluded, 2, rng)
        assert len(picks) == len(set(picks)) == 2
        for pick in picks:
            assert pick not in excluded
            counts[pick] += 1
    drawn = {c for c, n in counts.items() if n > 0}
    assert drawn == set(corpus) - excluded
    values = [counts[c] for c in sorted(drawn)]
    assert max(values) - min(values) < 0.25 * max(values)  # roughly uniform


def test_filtered_random_sample_exhausted():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="cannot draw"):
        filtered_random_sample(["a", "b"], {"a"}, 2, rng)


def _corpus_fixture(n=12, dim=4, seed=0, short_ids=()):
    """Graph + index over n synthetic logs with seeded vectors."""
    rng = np.random.default_rng(seed)
    long_text = "x" * 120
    logs = []
    for i in range(n):
        log_id = f"d{i:02d}"
        text = "y" * 40 if log_id in short_ids else long_text
        logs.append((log_id, text))
    fls = [("f0", "C0", "fl")]
    edges = [(log_id, "f0", "reports_about") for log_id, _ in logs]
    from plantsearch.kg import Relation

    g = make_graph(logs, fls, [(s, d, Relation(r)) for s, d, r in edges])
    vectors = {log_id: rng.normal(size=dim).tolist() for log_id, _ in logs}
    vectors["f0"] = rng.normal(size=dim).tolist()
    table = make_table(vectors)
    index = build_index(table, [log_id for log_id, _ in logs])
    return g, index


def test_sample_triplets_structure():
    g, index = _corpus_fixture(n=12)
    p = SamplingParams(k_pos=2, c_pos=2, k_hard=6, c_hard=2, c_easy=2, min_text_chars=100)
    tset = sample_triplets(index, g, p)
    assert tset.skipped == 0
    assert tset.index_fingerprint == index.fingerprint()
    by_query = {}
    for t in tset.triplets:
        by_query.setdefault(t.query, []).append(t)
    assert sorted(by_query) == sorted(index.ids)
    for query, ts in by_query.items():
        # c_easy easy rows then c_hard hard rows
        assert [t.neg_kind for t in ts] == [NegKind.EASY] * 2 + [NegKind.HARD] * 2
        neighbors = [n for n, _ in knn(index, query, p.k_hard)]
        pos_band = set(neighbors[: p.k_pos])
        hard_band = set(neighbors[p.k_hard - p.c_hard : p.k_hard])
        for t in ts:
            assert t.positive in pos_band
            assert len({t.query, t.positive, t.negative}) == 3
            if t.neg_kind is NegKind.HARD:
                assert t.negative in hard_band
            else:
                assert t.negative not in set(neighbors) | {query}
        # positives cycle through the band in emission order
        assert ts[0].positive == neighbors[0]
        assert ts[1].positive == neighbors[1]
        assert ts[2].positive == neighbors[0]
        assert ts[3].positive == neighbors[1]


def test_sample_triplets_skips_short_queries():
    g, index = _corpus_fixture(n=12, short_ids={"d03"})
    p = SamplingParams(k_pos=1, c_pos=1, k_hard=5, c_hard=1, c_easy=1, min_text_chars=100)
    tset = sample_triplets(index, g, p)
    assert tset.skipped == 1
    queries = {t.query for t in tset.triplets}
    assert "d03" not in queries
    # the short doc is ineligible as positive or negative too
    for t in tset.triplets:
        assert "d03" not in (t.positive, t.negative)


def test_sample_triplets_skips_small_corpus():
    g, index = _corpus_fixture(n=6)
    p = SamplingParams(k_pos=1, c_pos=1, k_hard=5, c_hard=1, c_easy=1)
    # eligible-1 = 5 < k_hard + c_easy = 6: every query skipped, no clamping
    tset = sample_triplets(index, g, p)
    assert tset.triplets == []
    assert tset.skipped == 6


def test_sample_triplets_deterministic():
    g, index = _corpus_fixture(n=14)
    p = SamplingParams(k_pos=2, c_pos=2, k_hard=7, c_hard=2, c_easy=3, rng_seed=9)
    a = sample_triplets(index, g, p)
    b = sample_triplets(index, g, p)
    assert a.triplets == b.triplets


def test_sample_triplets_rejects_foreign_index():
    g, index = _corpus_fixture(n=12)
    other_g, _ = _corpus_fixture(n=3)
    p = SamplingParams(k_pos=1, c_pos=1, k_hard=3, c_hard=1)
    with pytest.raises(KeyError):
        sample_triplets(index, other_g, p)


def test_sample_triplets_rejects_non_log_ids():
    g, _ = _corpus_fixture(n=6)
    rng = np.random.default_rng(1)
    vectors = {node_id: rng.normal(size=4).tolist() for node_id in g.nodes}
    index = build_index(make_table(vectors), list(g.nodes))  # includes the FL
    with pytest.raises(ValueError, match="not a text log"):
        sample_triplets(index, g, SamplingParams(k_pos=1, c_pos=1, k_hard=3, c_hard=1))


def test_save_load_round_trip(tmp_path):
    triplets = [
        Triplet("q1", "p1", "n1", NegKind.EASY),
        Triplet("q1", "p1", "n2", NegKind.HARD),
        Triplet("q2", "p2", "n3", NegKind.HARD),
    ]
    tset = TripletSet(triplets, SamplingParams(), "fp", skipped=1)
    save_triplets(tset, tmp_path / "t.jsonl")
    back = load_triplets(tmp_path / "t.jsonl", SamplingParams(), "fp")
    assert back.triplets == triplets
    assert back.index_fingerprint == "fp"
