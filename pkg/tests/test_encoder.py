import numpy as np
import pytest

from mlcl.encoder import EncoderParams, backbone, encode, encoder_backward, init_encoder
from mlcl.gradcheck import grad_check

import oracles


def test_zero_weights_hit_degenerate_norm():
    p = init_encoder(5, hidden=4, depth=2, embed_dim=3)
    zero = EncoderParams.from_tensors({k: np.zeros_like(v) for k, v in p.tensors().items()})
    with pytest.raises(ValueError, match="degenerate norm"):
        encode(zero, np.ones(5))


def test_identity_single_layer():
    eye = np.eye(4)
    p = EncoderParams([(eye, np.zeros(4))], eye.copy(), eye.copy())
    x = np.array([0.5, -0.5, 0.5, 0.5])
    out = encode(p, x)
    relu = np.maximum(x, 0)
    np.testing.assert_allclose(out.backbone_repr, relu)
    np.testing.assert_allclose(out.projected, relu / np.linalg.norm(relu), atol=1e-15)


def test_forward_matches_loop_oracle():
    p = init_encoder(7, hidden=6, depth=3, embed_dim=4, seed=3)
    xs = np.random.default_rng(0).standard_normal((5, 7))
    out = encode(p, xs)
    layers = [(w.tolist(), b.tolist()) for w, b in p.layers]
    for i, x in enumerate(xs):
        rep, proj = oracles.mlp_forward(layers, p.proj1.tolist(), p.proj2.tolist(), x)
        np.testing.assert_allclose(out.backbone_repr[i], rep, atol=1e-12)
        np.testing.assert_allclose(out.projected[i], proj, atol=1e-12)
    np.testing.assert_array_equal(backbone(p, xs), out.backbone_repr)


def test_single_vector_and_batch_agree():
    p = init_encoder(6, hidden=5, depth=2, embed_dim=3, seed=1)
    x = np.random.default_rng(2).standard_normal((4, 6))
    batch = encode(p, x)
    for i in range(4):
        single = encode(p, x[i])
        assert single.projected.shape == (3,)
        np.testing.assert_allclose(single.projected, batch.projected[i], atol=1e-15)


def test_dimension_mismatch():
    p = init_encoder(6, hidden=5, depth=1, embed_dim=3)
    with pytest.raises(ValueError, match="feature dimension"):
        encode(p, np.ones(5))
    with pytest.raises(ValueError):
        EncoderParams([(np.ones((3, 4)), np.ones(3))], np.ones((2, 2)), np.ones((2, 3)))


def test_zero_upstream_gives_zero_grads():
    p = init_encoder(6, hidden=5, depth=2, embed_dim=3, seed=4)
    x = np.random.default_rng(1).standard_normal((3, 6))
    grads, gx = encoder_backward(p, x, np.zeros((3, 3)))
    assert all(np.all(g == 0) for g in grads.tensors().values())
    assert np.all(gx == 0)


def test_one_dimensional_chain_rule():
    # 1-d path: r = relu(w x + b), out = normalize(w2 relu(w1 r)) is constant +1,
    # so only grad_repr carries signal: d(c*r)/dw = c*x, d/db = c
    w, b = np.array([[2.0]]), np.array([0.5])
    p = EncoderParams([(w, b)], np.array([[1.0]]), np.array([[1.0]]))
    x = np.array([[3.0]])
    grads, gx = encoder_backward(p, x, np.array([[1.0]]), grad_repr=np.array([[0.7]]))
    layer_w, layer_b = grads.layers[0]
    assert layer_w[0, 0] == pytest.approx(0.7 * 3.0)
    assert layer_b[0] == pytest.approx(0.7)
    assert gx[0, 0] == pytest.approx(0.7 * 2.0)
    assert grads.proj1[0, 0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_check(seed):
    assert grad_check("encoder", seed).max_rel_error < 1e-6


def test_projection_invariant_to_w2_scaling():
    p = init_encoder(6, hidden=5, depth=2, embed_dim=3, seed=9)
    x = np.random.default_rng(3).standard_normal((4, 6))
    scaled = p.copy()
    scaled.proj2 *= 7.3
    np.testing.assert_allclose(encode(p, x).projected, encode(scaled, x).projected, atol=1e-10)


def test_init_bounds_and_determinism():
    a = init_encoder(16, hidden=8, depth=2, embed_dim=4, seed=5)
    b = init_encoder(16, hidden=8, depth=2, embed_dim=4, seed=5)
    for k, v in a.tensors().items():
        assert v.tobytes() == b.tensors()[k].tobytes()
    assert np.max(np.abs(a.layers[0][0])) <= 1 / np.sqrt(16)
    assert np.max(np.abs(a.layers[1][0])) <= 1 / np.sqrt(8)
    assert list(a.tensors()) == ["backbone.0.weight", "backbone.0.bias", "backbone.1.weight",
                                 "backbone.1.bias", "proj.w1", "proj.w2"]
