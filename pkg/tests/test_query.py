import numpy as np
import pytest

from refpts.core import FusionConfig
from refpts.query import (
    DimensionMismatchError,
    Query,
    QueryFusionConfig,
    fuse_queries,
    pair_queries,
    query_fusion_step,
    select_top_k,
)


def q(conf, iid, ref=(0, 0, 0), sem=(0.0, 0.0), pos=(0.0, 0.0)):
    return Query(np.array(pos), np.array(sem), conf, ref, iid)


def test_query_validation():
    with pytest.raises(DimensionMismatchError):
        Query(np.zeros(3), np.zeros(2), 0.5, (0, 0, 0))
    with pytest.raises(DimensionMismatchError):
        Query(np.zeros(0), np.zeros(0), 0.5, (0, 0, 0))
    with pytest.raises(ValueError):
        Query(np.zeros(2), np.array([np.nan, 0]), 0.5, (0, 0, 0))
    with pytest.raises(ValueError):
        QueryFusionConfig(k=0)
    with pytest.raises(ValueError):
        QueryFusionConfig(lam=0.0)
    with pytest.raises(ValueError):
        QueryFusionConfig(lam=1.5)


def test_top_k_small_input_returns_all_sorted():
    qs = [q(0.2, 0), q(0.9, 1), q(0.5, 2)]
    assert [x.instance_id for x in select_top_k(qs, 10)] == [1, 2, 0]


def test_top_k_picks_highest():
    qs = [q(0.9, 0), q(0.5, 1), q(0.7, 2)]
    assert [x.confidence for x in select_top_k(qs, 2)] == [0.9, 0.7]


def test_top_k_ties_by_id():
    qs = [q(0.5, 3), q(0.5, 1), q(0.5, 2)]
    assert [x.instance_id for x in select_top_k(qs, 2)] == [1, 2]


def test_top_k_matches_full_sort(rng):
    conf = rng.uniform(0, 1, 900)
    qs = [q(float(c), i) for i, c in enumerate(conf)]
    expected = sorted(range(900), key=lambda i: -conf[i])[:10]
    assert [x.instance_id for x in select_top_k(qs, 10)] == expected


def test_empty_selection_is_noop():
    ego = [q(0.8, 0, sem=(1, 2))]
    pairing = pair_queries(ego, [], FusionConfig())
    out = fuse_queries(ego, [], pairing, QueryFusionConfig())
    assert out[0] is ego[0]


def test_zero_sender_semantics_is_identity():
    ego = [q(0.8, 0, sem=(1.25, -3.5), pos=(7, 8))]
    snd = [q(0.9, 0, ref=(0.2, 0, 0), sem=(0.0, 0.0))]
    out = fuse_queries(ego, snd, pair_queries(ego, snd, FusionConfig()), QueryFusionConfig(lam=1.0))
    assert out[0].sem_embed.tobytes() == ego[0].sem_embed.tobytes()
    assert out[0].pos_embed.tobytes() == ego[0].pos_embed.tobytes()


def test_additive_arithmetic():
    ego = [q(0.8, 0, sem=(1, 1), pos=(5, 6))]
    snd = [q(0.9, 0, ref=(0.5, 0, 0), sem=(2, 4))]
    out = fuse_queries(ego, snd, pair_queries(ego, snd, FusionConfig()), QueryFusionConfig(lam=0.5))
    assert out[0].sem_embed.tolist() == [2.0, 3.0]
    assert out[0].pos_embed.tolist() == [5.0, 6.0]


def test_dimension_mismatch_rejected():
    ego = [Query(np.zeros(4), np.zeros(4), 0.8, (0, 0, 0), 0)]
    snd = [Query(np.zeros(2), np.zeros(2), 0.8, (0, 0, 0), 0)]
    with pytest.raises(DimensionMismatchError, match="heterogeneous"):
        fuse_queries(ego, snd, pair_queries(ego, snd, FusionConfig()), QueryFusionConfig())


def test_properties_random(rng):
    d = 16
    for _ in range(50):
        ne, ns = int(rng.integers(0, 12)), int(rng.integers(0, 30))
        ego = [Query(rng.normal(size=d), rng.normal(size=d), float(rng.uniform()),
                     tuple(rng.uniform(-10, 10, 3)), i) for i in range(ne)]
        snd = [Query(rng.normal(size=d), rng.normal(size=d), float(rng.uniform()),
                     tuple(rng.uniform(-10, 10, 3)), i) for i in range(ns)]
        cfg = QueryFusionConfig(k=5, lam=0.5)
        fused, leftovers = query_fusion_step(ego, snd, FusionConfig(), cfg)
        assert len(fused) == len(ego)
        for a, b in zip(ego, fused):
            assert np.array_equal(a.pos_embed, b.pos_embed)
        # no more than k sender queries are ever consumed
        assert len(leftovers) <= min(cfg.k, ns)


def test_linearity_on_raw_arithmetic(rng):
    e, s = rng.normal(size=8), rng.normal(size=8)
    lam1, lam2 = 0.3, 0.45
    ego = [Query(np.zeros(8), e, 0.5, (0, 0, 0), 0)]
    snd = [Query(np.zeros(8), s, 0.5, (0, 0, 0), 0)]
    pairing = pair_queries(ego, snd, FusionConfig())
    twice = fuse_queries(fuse_queries(ego, snd, pairing, QueryFusionConfig(lam=lam1)), snd, pairing,
                         QueryFusionConfig(lam=lam2))
    once = fuse_queries(ego, snd, pairing, QueryFusionConfig(lam=lam1 + lam2))
    assert np.allclose(twice[0].sem_embed, once[0].sem_embed, rtol=0, atol=1e-12)


def test_unpaired_sender_queries_fall_back_to_points():
    ego = [q(0.8, 0, ref=(0, 0, 0))]
    snd = [q(0.9, 0, ref=(0.3, 0, 0)), q(0.7, 1, ref=(25, 0, 0)), q(0.1, 2, ref=(40, 0, 0))]
    fused, leftovers = query_fusion_step(ego, snd, FusionConfig(), QueryFusionConfig(k=2))
    assert [p.position for p in leftovers.points] == [(25, 0, 0)]
