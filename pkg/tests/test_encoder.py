import numpy as np
import pytest
from scipy.stats import ortho_group

from oracles import dense_normalized, dense_readout
from qagcl.encoder import (EmbeddingState, forward, init_embeddings, load_checkpoint,
                           save_checkpoint, score, score_matrix)
from qagcl.graph import build_normalized


def test_init_deterministic_and_centered():
    a = init_embeddings(4, 2, seed=7)
    b = init_embeddings(4, 2, seed=7)
    np.testing.assert_array_equal(a.E0, b.E0)
    big = init_embeddings(5000, 64, seed=1).E0
    stderr = 0.1 / np.sqrt(big.size)
    assert abs(big.mean()) < 3 * stderr
    assert big.std() == pytest.approx(0.1, rel=0.01)


def test_layer_weights_validated():
    with pytest.raises(ValueError):
        EmbeddingState(np.zeros((2, 2)), 1, np.array([0.3, 0.3]))
    with pytest.raises(ValueError):
        EmbeddingState(np.zeros((2, 2)), 2, np.array([0.5, 0.5]))


def test_zero_layers_is_identity(rng):
    st = EmbeddingState(rng.normal(size=(5, 3)), 0)
    g = build_normalized(2, 3, [(0, 0), (1, 2)])
    v = forward(st, g, g, g)
    for f in (v.main_final, v.hd_final, v.ed_final):
        np.testing.assert_array_equal(f, st.E0)


def test_one_layer_single_edge_by_hand():
    E0 = np.array([[1.0, 0.0], [0.0, 2.0]])
    g = build_normalized(1, 1, [(0, 0)])
    v = forward(EmbeddingState(E0, 1), g)
    np.testing.assert_allclose(v.main_final, [[0.5, 1.0], [0.5, 1.0]])


def test_three_layers_match_dense_oracle(rng):
    nu, ns = 15, 25
    edges = [(u, s) for u in range(nu) for s in range(ns) if rng.random() < 0.2]
    st = EmbeddingState(rng.normal(size=(nu + ns, 6)), 3)
    g = build_normalized(nu, ns, edges)
    want = dense_readout(dense_normalized(nu, ns, edges), st.E0, st.layer_weights)
    np.testing.assert_allclose(forward(st, g).main_final, want, atol=1e-10, rtol=0)


def test_views_coincide_on_identical_graphs(rng):
    g = build_normalized(3, 4, [(0, 0), (1, 1), (2, 3), (0, 3)])
    v = forward(EmbeddingState(rng.normal(size=(7, 4)), 2), g, g, g)
    np.testing.assert_allclose(v.hd_final, v.main_final, atol=1e-12)
    np.testing.assert_allclose(v.ed_final, v.main_final, atol=1e-12)


def test_forward_linear_in_E0(rng):
    g = build_normalized(3, 4, [(0, 0), (1, 1), (2, 3), (0, 3)])
    X, Y = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    f = lambda E: forward(EmbeddingState(E, 2), g).main_final
    np.testing.assert_allclose(f(2 * X - 3 * Y), 2 * f(X) - 3 * f(Y), atol=1e-12)


def test_shape_mismatch_rejected(rng):
    g = build_normalized(2, 2, [(0, 0)])
    with pytest.raises(ValueError):
        forward(EmbeddingState(rng.normal(size=(5, 2)), 1), g)


def test_score():
    final = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 0.0]])
    assert score(final, 0, 0, num_users=1) == 0.5
    assert score(final, 0, 1, num_users=1) == 0.0
    with pytest.raises(IndexError):
        score(final, 1, 0, num_users=1)
    with pytest.raises(IndexError):
        score(final, 0, 2, num_users=1)


def test_score_matches_dense_pipeline(rng):
    nu, ns = 4, 6
    edges = [(u, s) for u in range(nu) for s in range(ns) if (u * 7 + s) % 3 == 0]
    st = EmbeddingState(rng.normal(size=(nu + ns, 5)), 2)
    final = forward(st, build_normalized(nu, ns, edges)).main_final
    F = dense_readout(dense_normalized(nu, ns, edges), st.E0, st.layer_weights)
    for u in range(nu):
        for s in range(ns):
            assert score(final, u, s, nu) == pytest.approx(float(F[u] @ F[nu + s]), abs=1e-12)


def test_scores_invariant_to_rotation_at_L0(rng):
    E0 = rng.normal(size=(6, 4))
    Q = ortho_group.rvs(4, random_state=3)
    g = build_normalized(2, 4, [(0, 0)])
    a = score_matrix(forward(EmbeddingState(E0, 0), g).main_final, 2)
    b = score_matrix(forward(EmbeddingState(E0 @ Q, 0), g).main_final, 2)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path, rng):
    st = init_embeddings(9, 4, seed=3, num_layers=2)
    save_checkpoint(tmp_path / "c.bin", st, config_hash="abc", split_hash="def")
    back = load_checkpoint(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.E0, st.E0)
    assert back.num_layers == 2 and back.seed == 3
    np.testing.assert_array_equal(back.layer_weights, st.layer_weights)
    assert back.meta["config_hash"] == "abc" and back.meta["split_hash"] == "def"
    save_checkpoint(tmp_path / "d.bin", back)
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()
