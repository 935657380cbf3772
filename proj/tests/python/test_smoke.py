import numpy as np
import pytest

import optvq


def test_sinkhorn_plan_columns_sum_to_one():
    rng = np.random.default_rng(0)
    d = rng.uniform(0, 4, size=(6, 4))
    plan = optvq.sinkhorn(d, epsilon=10.0, iterations=5)
    assert plan.shape == (6, 4)
    np.testing.assert_allclose(plan.sum(axis=0), 1.0, atol=1e-12)


def test_normalize_cost_is_scale_free():
    d = np.array([[0.0, 1.0], [2.0, 4.0]])
    a = optvq.normalize_cost(d)
    b = optvq.normalize_cost(d * 1e3)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.min() == 0.0


def test_nn_matches_numpy_argmin():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(20, 3))
    c = rng.normal(size=(7, 3))
    expected = ((z[:, None, :] - c[None]) ** 2).sum(-1).argmin(1)
    assert optvq.nn_assign(z, c) == expected.tolist()
    np.testing.assert_allclose(optvq.pairwise_sq_distances(z, c),
                               ((z[:, None, :] - c[None]) ** 2).sum(-1), atol=1e-12)


def test_optvq_assign_separated_pairs_matches_identity():
    c = np.eye(4) * 5.0
    z = c + 0.01
    assert optvq.optvq_assign(z, c) == [0, 1, 2, 3]


def test_multihead_quantize_concatenates_heads():
    z = np.array([[0.1, 0.0, 2.0, 2.1]])
    books = [np.array([[0.0, 0.0], [5.0, 5.0]]), np.array([[2.0, 2.0], [-3.0, 0.0]])]
    zq, idx = optvq.quantize(z, books, kind="nearest")
    np.testing.assert_allclose(zq, [[0.0, 0.0, 2.0, 2.0]])
    assert idx == [[0], [0]]


def test_commitment_loss_and_usage():
    ze = np.array([[1.0, 0.0]])
    zq = np.array([[0.0, 0.0]])
    loss, g_ze, g_zq = optvq.commitment_loss(ze, zq, beta=0.25)
    assert loss == pytest.approx(1.25)
    np.testing.assert_allclose(g_ze, [[0.5, 0.0]])
    np.testing.assert_allclose(g_zq, [[-2.0, 0.0]])
    s = optvq.usage_stats([0, 0, 1, 1], 4)
    assert s["fraction_used"] == 0.5
    assert s["perplexity"] == pytest.approx(2.0)


def test_errors_map_to_python_exceptions():
    with pytest.raises(optvq.ShapeError):
        optvq.pairwise_sq_distances(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(optvq.ConfigError):
        optvq.sinkhorn(np.zeros((2, 2)), epsilon=-1.0)
    with pytest.raises(optvq.ConfigError):
        optvq.train({"no_such_key": "1"})


def test_tiny_synthetic_training_is_deterministic():
    cfg = {"dataset": "synthetic", "train_images": "32", "val_images": "8", "epochs": "1",
           "codebook_size": "16", "batch_size": "8", "seed": "3"}
    a = optvq.train(cfg)
    b = optvq.train(cfg)
    assert len(a["steps"]) == 4
    assert a["checkpoint"] == b["checkpoint"]
    assert a["checkpoint"][:4] == b"OVQ1"
    assert 0.0 < a["validation"]["usage_frac"] <= 1.0


def test_dynamics2d_runs():
    r = optvq.dynamics2d(seed=0, steps=20)
    assert r["points"].shape == (100, 2)
    assert r["optvq_codes"].shape == (25, 2)
