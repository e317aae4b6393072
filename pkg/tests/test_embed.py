import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from oracles import central_difference, max_relative_error
from refnet.embed import (Attri2VecConfig, EmbeddingMatrix, SageConfig, WalkConfig,
                          attri2vec_map, biased_walks, node_features, pca_2d, train_attri2vec,
                          train_graphsage, train_node2vec, train_skipgram)
from refnet.embed.attri2vec import attri2vec_loss
from refnet.embed.graphsage import SageModel, pair_loss, sage_backward, sage_forward
from refnet.embed.skipgram import sgns_loss
from refnet.embed.walks import context_pairs, unigram_table
from refnet.graph import Network
from refnet.numkit import derive_rng


def two_cliques(size=6):
    net = Network(2 * size)
    for base in (0, size):
        for i in range(size):
            for j in range(i + 1, size):
                net.add_edge(base + i, base + j)
    return net


def clique_cosines(vectors, size=6):
    v = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    cos = v @ v.T
    same = np.zeros_like(cos, dtype=bool)
    same[:size, :size] = same[size:, size:] = True
    np.fill_diagonal(same, False)
    cross = ~same
    np.fill_diagonal(cross, False)
    return cos[same].mean(), cos[cross].mean()


# -- walks ---------------------------------------------------------------------

def test_unbiased_walk_follows_edge_weights():
    net = Network(5)
    for leaf, w in zip(range(1, 5), (1.0, 2.0, 3.0, 4.0)):
        net.add_edge(0, leaf, w)
    walks = biased_walks(net, WalkConfig(walks_per_node=2000, walk_length=41, window=1), seed=11)
    a, b = walks[:, :-1].ravel(), walks[:, 1:].ravel()
    steps = b[(a == 0) & (b >= 0)]
    assert steps.size >= 100_000
    observed = np.bincount(steps, minlength=5)[1:]
    expected = steps.size * np.array([1, 2, 3, 4]) / 10
    assert chisquare(observed, expected).pvalue > 0.01


def test_isolated_node_walk_has_length_one():
    net = Network(3).add_edge(0, 1)
    walks = biased_walks(net, WalkConfig(walks_per_node=2, walk_length=6, window=2))
    for r in range(2):
        row = walks[r * 3 + 2]
        assert row[0] == 2 and np.all(row[1:] == -1)


def test_huge_q_returns_to_previous_node():
    net = Network.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    cfg = WalkConfig(walks_per_node=3000, walk_length=3, window=1, inout_q=1e6)
    walks = biased_walks(net, cfg, seed=2)
    from_a = walks[walks[:, 0] == 0]
    assert np.all(from_a[:, 1] == 1)
    assert np.mean(from_a[:, 2] == 0) > 0.999


def test_small_p_returns_more_often():
    net = Network.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    back = {}
    for p in (0.25, 4.0):
        w = biased_walks(net, WalkConfig(walks_per_node=2000, walk_length=3, window=1,
                                         return_p=p), seed=3)
        a = w[w[:, 0] == 0]
        back[p] = np.mean(a[:, 2] == 0)
    # closed form: (1/p) / (1/p + 1/q)
    assert back[0.25] == pytest.approx(0.8, abs=0.03)
    assert back[4.0] == pytest.approx(0.2, abs=0.03)


def test_directed_edges_walked_both_ways():
    net = Network(2, directed=True).add_edge(0, 1)
    walks = biased_walks(net, WalkConfig(walks_per_node=1, walk_length=4, window=1))
    assert walks[1].tolist() == [1, 0, 1, 0]


def test_walk_config_validation():
    with pytest.raises(ValueError):
        WalkConfig(walk_length=3, window=3)
    with pytest.raises(ValueError):
        WalkConfig(return_p=0)


def test_context_pairs_full_window():
    t, c = context_pairs(np.array([[0, 1, 2, -1]]), window=2)
    assert sorted(zip(t.tolist(), c.tolist())) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_unigram_table_power():
    p = unigram_table(np.array([[0, 0, 0, 0, 1]]), 3)
    assert p[2] == 0
    assert p[0] / p[1] == pytest.approx(4 ** 0.75)


# -- skip-gram -----------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 3, 5])
def test_sgns_loss_at_zero_is_k_plus_one_ln2(k):
    z = np.zeros((4, 3))
    loss, _, _ = sgns_loss(z, z, np.array([0]), np.array([1]), np.array([[2] * k]))
    assert loss == pytest.approx((k + 1) * math.log(2), abs=1e-12)


@pytest.mark.parametrize("dense", [True, False])
def test_sgns_gradients(dense):
    rng = derive_rng(0, "sgns")
    vec, ctx = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    t = rng.integers(6, size=9)
    pos = rng.integers(6, size=9)
    neg = rng.integers(6, size=(9, 3))
    _, gv, gc = sgns_loss(vec, ctx, t, pos, neg, dense=dense)

    def loss():
        return sgns_loss(vec, ctx, t, pos, neg, dense=dense)[0]

    assert max_relative_error(gv, central_difference(loss, vec)) < 1e-4
    assert max_relative_error(gc, central_difference(loss, ctx)) < 1e-4


def test_sgns_routes_agree():
    rng = derive_rng(1, "routes")
    vec, ctx = rng.normal(size=(10, 5)), rng.normal(size=(10, 5))
    t, pos, neg = rng.integers(10, size=30), rng.integers(10, size=30), rng.integers(10, size=(30, 4))
    a = sgns_loss(vec, ctx, t, pos, neg, dense=True)
    b = sgns_loss(vec, ctx, t, pos, neg, dense=False)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert np.allclose(a[1], b[1], atol=1e-12) and np.allclose(a[2], b[2], atol=1e-12)


def test_skipgram_separates_cliques():
    net = two_cliques()
    cfg = WalkConfig(walks_per_node=20, walk_length=20, window=3, negatives_per_positive=5)
    vec, hist = train_node2vec(net, cfg, seed=0, dim=8, epochs=30, batch_size=512)
    intra, inter = clique_cosines(vec)
    assert intra > inter
    assert hist[-1] < hist[0]


def test_skipgram_loss_drops_on_connected_graph():
    rng = derive_rng(4, "g")
    net = Network(12)
    for i in range(11):
        net.add_edge(i, i + 1)
    for _ in range(8):
        u, v = rng.choice(12, size=2, replace=False)
        net.add_edge(int(u), int(v))
    walks = biased_walks(net, WalkConfig(walks_per_node=5, walk_length=10, window=2), seed=1)
    _, hist = train_skipgram(walks, 12, dim=16, window=2, epochs=5, batch_size=256)
    assert hist[-1] < hist[0]


def test_skipgram_is_deterministic():
    net = two_cliques(4)
    cfg = WalkConfig(walks_per_node=3, walk_length=8, window=2)
    a, _ = train_node2vec(net, cfg, seed=9, dim=4)
    b, _ = train_node2vec(net, cfg, seed=9, dim=4)
    assert np.array_equal(a, b)


def test_skipgram_needs_pairs():
    with pytest.raises(ValueError):
        train_skipgram(np.array([[0, -1], [1, -1]]), 2, dim=2, window=1)


# -- GraphSAGE -----------------------------------------------------------------

def _sage_setup(seed=0):
    rng = derive_rng(seed, "sage-gc")
    cfg = SageConfig(layer_sizes=(4, 3), neighbor_samples=(3, 2), dropout=0.0)
    model = SageModel(3, cfg, rng=rng)
    for p in model.params:
        p += rng.normal(scale=0.1, size=p.shape)
    x = rng.normal(size=(6, 3))
    nodes = np.array([0, 1, 2, 3])
    hop1 = rng.integers(6, size=(4, 3))
    mask1 = np.ones((4, 3))
    mask1[3] = 0  # an isolated node
    hop2 = rng.integers(6, size=(12, 2))
    mask2 = np.repeat(mask1.reshape(-1, 1), 2, axis=1)
    return model, x, nodes, hop1, mask1, hop2, mask2


def test_sage_gradients():
    model, x, nodes, hop1, mask1, hop2, mask2 = _sage_setup()
    y = np.array([1.0, 0.0])

    def loss():
        z, _ = sage_forward(model, x, nodes, hop1, mask1, hop2, mask2)
        return pair_loss(z[:2], z[2:], y)[0]

    z, cache = sage_forward(model, x, nodes, hop1, mask1, hop2, mask2)
    for name in ("pre0", "pre1"):
        assert np.min(np.abs(cache[name])) > 1e-4
    _, dzu, dzv = pair_loss(z[:2], z[2:], y)
    grads = sage_backward(model, cache, np.concatenate([dzu, dzv]))
    for g, p in zip(grads, model.params):
        assert max_relative_error(g, central_difference(loss, p, h=1e-6)) < 1e-4


def test_pair_loss_gradient():
    rng = derive_rng(2, "pl")
    zu, zv = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    y = np.array([1.0, 0, 1, 0, 1])
    _, gu, gv = pair_loss(zu, zv, y)
    assert max_relative_error(gu, central_difference(lambda: pair_loss(zu, zv, y)[0], zu)) < 1e-6
    assert max_relative_error(gv, central_difference(lambda: pair_loss(zu, zv, y)[0], zv)) < 1e-6


SMALL_SAGE = SageConfig(epochs=3, batch_size=20)


def test_sage_output_unit_norm():
    net = two_cliques()
    x = derive_rng(0, "x").normal(size=(12, 2))
    emb, curve, _ = train_graphsage(net, x, SMALL_SAGE, seed=1)
    assert emb.shape == (12, 20)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1.0)
    assert len(curve) == 3


def test_sage_zero_features_zero_init_symmetric():
    emb, _, _ = train_graphsage(two_cliques(), np.zeros((12, 2)), SMALL_SAGE, seed=0, init="zeros")
    assert np.allclose(emb, emb[0], atol=0)


def test_sage_separates_cliques():
    x = np.zeros((12, 2))
    x[:6, 0] = x[6:, 1] = 1.0
    emb, _, _ = train_graphsage(two_cliques(), x, SageConfig(epochs=10, batch_size=20), seed=0)
    intra, inter = clique_cosines(emb)
    assert intra > inter


def test_sage_feature_mismatch():
    with pytest.raises(ValueError, match="rows"):
        train_graphsage(two_cliques(), np.zeros((5, 2)), SMALL_SAGE)


def test_sage_deterministic():
    x = derive_rng(0, "x").normal(size=(12, 2))
    a = train_graphsage(two_cliques(), x, SMALL_SAGE, seed=4)[0]
    b = train_graphsage(two_cliques(), x, SMALL_SAGE, seed=4)[0]
    assert np.array_equal(a, b)


# -- Attri2Vec -----------------------------------------------------------------

SMALL_A2V = Attri2VecConfig(hidden_dim=8, epochs=3)


@pytest.mark.parametrize("mapping", ["sigmoid", "linear"])
def test_attri2vec_gradients(mapping):
    rng = derive_rng(3, "a2v")
    w, ctx, x = rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
    t, c = rng.integers(6, size=10), rng.integers(6, size=10)
    y = (rng.random(10) < 0.5).astype(float)
    _, gw, gc = attri2vec_loss(w, ctx, x, t, c, y, mapping)

    def loss():
        return attri2vec_loss(w, ctx, x, t, c, y, mapping)[0]

    assert max_relative_error(gw, central_difference(loss, w)) < 1e-4
    assert max_relative_error(gc, central_difference(loss, ctx)) < 1e-4


def test_attri2vec_range_and_identical_features():
    x = derive_rng(0, "x").normal(size=(12, 3))
    x[7] = x[2]
    emb, curve, w = train_attri2vec(two_cliques(), x, SMALL_A2V, seed=0)
    assert np.all((emb > 0) & (emb < 1))
    assert np.array_equal(emb[7], emb[2])
    assert len(curve) == 3


def test_attri2vec_inductive_mapping():
    x = derive_rng(1, "x").normal(size=(12, 3))
    emb, _, w = train_attri2vec(two_cliques(), x, SMALL_A2V, seed=0)
    new = np.array([[0.3, -1.0, 2.0]])
    assert np.array_equal(attri2vec_map(w, new), 1 / (1 + np.exp(-(new @ w))))
    assert np.allclose(attri2vec_map(w, x), emb)


def test_attri2vec_mapping_validation():
    with pytest.raises(ValueError):
        Attri2VecConfig(mapping="tanh")


# -- features and exports --------------------------------------------------------

def test_node_features_layout():
    net = Network(3, external_ids=["a", "b", "c"])
    people = pd.DataFrame({"age": [30.0, 40.0, 50.0], "age_imputed": [0, 0, 1],
                           "gender_code": [0.0, 1.0, np.nan]}, index=["a", "b", "c"])
    base = node_features(net, people, "without_social")
    assert base.shape == (3, 2)
    assert base[:, 0].mean() == pytest.approx(0.0) and base[2, 1] == 0.5
    social = {"a": (0.1, 0.2, 0.0), "b": (0.3, 0.4, 2.0)}
    full = node_features(net, people, "with_social", social)
    assert full.shape == (3, 6)
    assert full[:, 2:5].min() >= 0 and full[:, 2:5].max() <= 1
    assert full[:, 5].tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        node_features(net, people, "with_social")


def test_embedding_matrix_contract():
    with pytest.raises(ValueError):
        EmbeddingMatrix((0, 1), np.array([[np.nan], [0.0]]), "node2vec", "with_social")
    e = EmbeddingMatrix((0, 1), np.eye(2), "node2vec", "with_social")
    with pytest.raises(KeyError, match="5"):
        e.rows([0, 5])
    assert e.to_csv() == "node_id,e0,e1\n0,1,0\n1,0,1\n"


@given(st.integers(0, 1000))
def test_pca_axes_signs_and_variance_order(seed):
    x = derive_rng(seed, "pca").normal(size=(20, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    xy = pca_2d(x)
    assert xy.shape == (20, 2)
    assert xy[:, 0].var() >= xy[:, 1].var() - 1e-9
    assert np.allclose(xy.mean(axis=0), 0, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(2, 7))
def test_walks_only_step_along_edges(seed, n):
    rng = derive_rng(seed, "rg")
    net = Network(n)
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < 0.4:
                net.add_edge(u, v, float(rng.integers(1, 4)))
    cfg = WalkConfig(walks_per_node=2, walk_length=6, window=2,
                     return_p=float(rng.choice([0.5, 1, 2])), inout_q=float(rng.choice([0.5, 1, 2])))
    walks = biased_walks(net, cfg, seed=seed)
    for row in walks:
        row = row[row >= 0]
        for a, b in zip(row, row[1:]):
            assert net.has_edge(int(a), int(b))
        if net.degree(int(row[0])):
            assert row.size == cfg.walk_length
