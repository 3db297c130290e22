import math

import numpy as np
import pytest

from oracles import oracle_cosine, oracle_mnr
from plantsearch.losses import (
    NonFiniteError,
    cosine,
    edge_ranking_loss_grad,
    finite_diff_check,
    mnr_loss,
    mnr_loss_grad,
    triplet_loss,
    triplet_loss_grad,
)

# Hand-computed: (query, positive, negative, margin, expected loss).
# Distances use 3-4-5 style vectors so every expectation is exact.
TRIPLET_FIXTURES = [
    # inactive hinge: 5 - 10 + 1 < 0
    ([0, 0], [3, 4], [6, 8], 1.0, 0.0),
    # active hinge: 5 - 10 + 6 = 1
    ([0, 0], [3, 4], [6, 8], 6.0, 1.0),
    # equal distances: loss is exactly the margin (sample-induced symmetry)
    ([0, 0], [1, 0], [0, 1], 1.0, 1.0),
    ([0, 0], [1, 1], [1, -1], 2.5, 2.5),
    # all three vectors coincide: both distances zero, loss = margin
    ([2, 2], [2, 2], [2, 2], 0.5, 0.5),
    # hinge lands exactly on zero: 0 - 1 + 1
    ([1, 2, 3], [1, 2, 3], [1, 2, 4], 1.0, 0.0),
    # another exact-zero boundary: 0 - 5 + 5
    ([3, 4], [3, 4], [0, 0], 5.0, 0.0),
    # 1-d: |0-2| - |0-1| + 1 = 2
    ([0], [2], [1], 1.0, 2.0),
    # positive farther than negative, margin 0: 5 - 0 + 0
    ([1, 1], [4, 5], [1, 1], 0.0, 5.0),
    # 2 - 3 + 1.5 = 0.5
    ([2, 0], [0, 0], [-1, 0], 1.5, 0.5),
    # 13 - 13 + 3 = 3 (5-12-13 triangles)
    ([0, 0], [5, 12], [12, 5], 3.0, 3.0),
    # negative margin is legal input: 5 - 10 - 1 < 0
    ([0, 0], [3, 4], [6, 8], -1.0, 0.0),
]


def test_triplet_loss_hand_fixtures():
    assert len(TRIPLET_FIXTURES) >= 10
    for dq, dp, dn, margin, expected in TRIPLET_FIXTURES:
        got = triplet_loss(np.array(dq, float), np.array(dp, float), np.array(dn, float), margin)
        assert got == pytest.approx(expected, abs=1e-12), (dq, dp, dn, margin)


def test_triplet_loss_shape_mismatch():
    with pytest.raises(ValueError):
        triplet_loss(np.zeros(2), np.zeros(3), np.zeros(2))


def test_triplet_loss_non_finite():
    with pytest.raises(NonFiniteError):
        triplet_loss(np.array([np.nan, 0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(NonFiniteError):
        triplet_loss(np.zeros(2), np.array([np.inf, 0.0]), np.zeros(2))


def test_triplet_grad_zero_when_hinge_inactive():
    loss, gq, gp, gn = triplet_loss_grad(
        np.array([0.0, 0.0]), np.array([3.0, 4.0]), np.array([6.0, 8.0]), 1.0
    )
    assert loss == 0.0
    assert not gq.any() and not gp.any() and not gn.any()


def test_triplet_grad_finite_difference():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 20:
        dq, dp, dn = rng.normal(size=(3, 5))
        margin = float(rng.uniform(0.5, 2.0))
        value = (
            np.linalg.norm(dq - dp) - np.linalg.norm(dq - dn) + margin
        )
        if abs(value) < 1e-2:  # keep probes away from the hinge kink
            continue
        packed = np.concatenate([dq, dp, dn])

        def f(x):
            q, p, n = x[:5], x[5:10], x[10:]
            loss, gq, gp, gn = triplet_loss_grad(q, p, n, margin)
            return loss, np.concatenate([gq, gp, gn])

        assert finite_diff_check(f, packed, probe_count=15, seed=checked) < 1e-6
        checked += 1


def test_cosine_hand_values():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine(np.array([2.0, 0.0]), np.array([5.0, 0.0])) == pytest.approx(1.0, abs=1e-15)
    assert cosine(np.array([1.0, 0.0]), np.array([-3.0, 0.0])) == pytest.approx(-1.0, abs=1e-15)
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = rng.normal(size=(2, 4))
        assert cosine(a, b) == pytest.approx(oracle_cosine(a, b), abs=1e-12)


def test_mnr_loss_matches_oracle():
    rng = np.random.default_rng(7)
    for trial in range(30):
        n = int(rng.integers(1, 6))
        m = n + int(rng.integers(0, 4))  # extra appended negatives
        dim = int(rng.integers(2, 6))
        q = rng.normal(size=(n, dim))
        d = rng.normal(size=(m, dim))
        scale = float(rng.uniform(1.0, 30.0))
        got = mnr_loss_grad(q, d, scale)[0]
        want = oracle_mnr(q.tolist(), d.tolist(), scale)
        assert got == pytest.approx(want, abs=1e-12), trial


def test_mnr_loss_square_contract():
    q = np.random.default_rng(0).normal(size=(3, 4))
    d = np.random.default_rng(1).normal(size=(5, 4))
    with pytest.raises(ValueError):
        mnr_loss(q, d)  # the plain loss insists on a square batch
    assert mnr_loss(q, d[:3]) > 0.0


def test_mnr_perfect_batch_is_small():
    # Orthogonal one-hot docs, each query equal to its doc: the diagonal
    # dominates every off-diagonal logit by the full scale.
    q = np.eye(4)
    loss = mnr_loss(q, q, scale=20.0)
    assert loss < math.log(1 + 3 * math.exp(-20.0)) + 1e-12


def test_mnr_errors():
    with pytest.raises(ValueError):
        mnr_loss_grad(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        mnr_loss_grad(np.ones((2, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError, match="zero-norm query row 1"):
        mnr_loss_grad(np.array([[1.0, 0], [0, 0]]), np.ones((2, 2)))
    with pytest.raises(ValueError, match="zero-norm doc row 0"):
        mnr_loss_grad(np.ones((2, 2)), np.array([[0.0, 0], [1, 1]]))


def test_mnr_grad_finite_difference():
    rng = np.random.default_rng(3)
    for trial in range(5):
        n, m, dim = 3, 5, 4
        q = rng.normal(size=(n, dim))
        d = rng.normal(size=(m, dim))
        packed = np.concatenate([q.ravel(), d.ravel()])

        def f(x):
            qq = x[: n * dim].reshape(n, dim)
            dd = x[n * dim :].reshape(m, dim)
            loss, gq, gd = mnr_loss_grad(qq, dd, 10.0)
            return loss, np.concatenate([gq.ravel(), gd.ravel()])

        assert finite_diff_check(f, packed, probe_count=20, seed=trial) < 1e-6


def test_edge_ranking_loss_hand_case():
    # src+rel = (1,0); dst = (1,0) -> s_pos = 1; negs (0,1) and (-1,0)
    # -> hinges max(0, 0.5 - 1 + 0) = 0 and max(0, 0.5 - 1 - 1) = 0.
    src = np.array([1.0, 0.0])
    rel = np.zeros(2)
    dst = np.array([1.0, 0.0])
    negs = np.array([[0.0, 1.0], [-1.0, 0.0]])
    loss, g_src, g_rel, g_dst, g_negs = edge_ranking_loss_grad(src, rel, dst, negs, 0.5)
    assert loss == 0.0
    assert not g_src.any() and not g_negs.any()
    # margin 2.5 activates both: (2.5 - 1 + 0) + (2.5 - 1 - 1) = 1.5 + 0.5, mean 1.0
    loss2, *_ = edge_ranking_loss_grad(src, rel, dst, negs, 2.5)
    assert loss2 == pytest.approx(1.0, abs=1e-12)


def test_edge_ranking_src_rel_grads_coincide():
    rng = np.random.default_rng(9)
    src, rel, dst = rng.normal(size=(3, 4))
    negs = rng.normal(size=(3, 4))
    _, g_src, g_rel, _, _ = edge_ranking_loss_grad(src, rel, dst, negs, 1.0)
    np.testing.assert_array_equal(g_src, g_rel)


def test_edge_ranking_grad_finite_difference():
    rng = np.random.default_rng(5)
    dim, n_negs = 4, 3
    for trial in range(5):
        src, rel, dst = rng.normal(size=(3, dim))
        negs = rng.normal(size=(n_negs, dim))
        packed = np.concatenate([src, rel, dst, negs.ravel()])

        def f(x):
            s, r, d = x[:dim], x[dim : 2 * dim], x[2 * dim : 3 * dim]
            ng = x[3 * dim :].reshape(n_negs, dim)
            loss, gs, gr, gd, gn = edge_ranking_loss_grad(s, r, d, ng, 5.0)
            return loss, np.concatenate([gs, gr, gd, gn.ravel()])

        # margin 5 keeps every hinge active, so the loss is smooth here
        assert finite_diff_check(f, packed, probe_count=20, seed=trial) < 1e-6


def test_edge_ranking_requires_negatives():
    with pytest.raises(ValueError):
        edge_ranking_loss_grad(np.ones(2), np.ones(2), np.ones(2), np.empty((0, 2)), 1.0)


def test_finite_diff_check_flags_wrong_gradient():
    def broken(x):
        return float((x**2).sum()), 3.0 * x  # true gradient is 2x

    assert finite_diff_check(broken, np.array([1.0, 2.0]), seed=0) > 0.3
