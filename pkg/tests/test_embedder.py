"""Speaker embedder: shapes, determinism, dropout seeding, weight sharing."""

import numpy as np
import pytest

from deepvox.embedder import (EmbedConfig, embed, embed_features, embed_triplet,
                              init_embedder_params)
from deepvox.nd import ConvSpec, Tensor


@pytest.fixture(scope="module")
def cfg():
    return EmbedConfig()


@pytest.fixture(scope="module")
def params(cfg):
    return init_embedder_params(cfg, seed=17)


def feats(n, rng_seed=0, t=200):
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((n, 40, t)).astype(np.float32)


def test_config_validation():
    EmbedConfig()
    with pytest.raises(ValueError, match="at least one"):
        EmbedConfig(layers=())
    with pytest.raises(ValueError, match="chain broken"):
        EmbedConfig(layers=(ConvSpec(40, 64, 3), ConvSpec(32, 128, 3)))
    with pytest.raises(ValueError, match="dropout_p"):
        EmbedConfig(dropout_p=1.0)
    with pytest.raises(ValueError, match="embedding_dim"):
        EmbedConfig(embedding_dim=0)


def test_param_shapes(cfg, params):
    assert params["emb.l0.w"].data.shape == (64, 40, 5)
    assert params["emb.l2.w"].data.shape == (128, 96, 3)
    assert params["emb.out.w"].data.shape == (128, 128)
    assert params["emb.out.b"].data.shape == (128,)
    again = init_embedder_params(cfg, seed=17)
    for k in params:
        assert np.array_equal(params[k].data, again[k].data)


def test_embed_features_shape_and_eval_determinism(cfg, params):
    x = feats(3)
    out1 = embed_features(x, params, cfg)
    out2 = embed_features(x, params, cfg)
    assert out1.shape == (3, 128)
    assert np.array_equal(out1.data, out2.data)
    with pytest.raises(ValueError, match="expected features"):
        embed_features(x[:, :10, :], params, cfg)


def test_eval_mode_ignores_step_seed(cfg, params):
    x = feats(2)
    a = embed_features(x, params, cfg, training=False, step_seed=1)
    b = embed_features(x, params, cfg, training=False, step_seed=2)
    assert np.array_equal(a.data, b.data)


def test_training_dropout_seeded(cfg, params):
    x = feats(2, rng_seed=5)
    a = embed_features(x, params, cfg, training=True, step_seed=7)
    b = embed_features(x, params, cfg, training=True, step_seed=7)
    c = embed_features(x, params, cfg, training=True, step_seed=8)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    # eval output differs from a dropped-out pass almost surely
    e = embed_features(x, params, cfg, training=False)
    assert not np.array_equal(a.data, e.data)


def test_batch_row_independence(cfg, params):
    """Each row's embedding depends only on its own feature matrix."""
    x = feats(4, rng_seed=3)
    full = embed_features(x, params, cfg).data
    solo = embed_features(x[1:2], params, cfg).data
    assert np.allclose(full[1], solo[0], atol=1e-6)


def test_embed_single(cfg, params):
    x = feats(1, rng_seed=9)[0]
    v = embed(x, params, cfg)
    assert v.shape == (128,)
    batch = embed_features(x[None], params, cfg).data
    assert np.array_equal(v, batch[0])


def test_embed_triplet_shares_weights(cfg, params):
    a, p, n = feats(3, rng_seed=11)
    out = embed_triplet(a, p, n, params, cfg)
    assert out.shape == (3, 128)
    # batch vs solo passes reorder the f32 accumulation, so compare tightly
    # rather than bitwise
    assert np.allclose(out.data[0], embed(a, params, cfg), atol=1e-6)
    assert np.allclose(out.data[1], embed(p, params, cfg), atol=1e-6)
    assert np.allclose(out.data[2], embed(n, params, cfg), atol=1e-6)


def test_gradients_reach_all_params(cfg, params):
    from deepvox import nd

    for t in params.values():
        t.grad = None
    x = feats(2, rng_seed=13)
    out = embed_features(x, params, cfg, training=True, step_seed=3)
    nd.sum_all(nd.mul(out, out)).backward()
    for name, t in params.items():
        assert t.grad is not None, name
        assert np.any(t.grad != 0.0), name
        t.grad = None
