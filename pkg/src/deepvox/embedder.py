"""Frame-level speaker embedding.

Dilated convolutions run along the 200-unit axis of a feature matrix
(SELU and alpha dropout after each), global average pooling collapses
time, and a final affine map emits a 128-d vector.  One parameter set
serves anchor, positive, and negative alike; "branches" of the triplet
are just three rows of a batch.
"""

from dataclasses import dataclass

import numpy as np

from . import nd
from .nd import ConvSpec, Tensor
from .rand import stream

DEFAULT_LAYERS = (
    ConvSpec(40, 64, 5, dilation=1),
    ConvSpec(64, 96, 5, dilation=2),
    ConvSpec(96, 128, 3, dilation=4),
)


@dataclass(frozen=True)
class EmbedConfig:
    layers: tuple = DEFAULT_LAYERS
    embedding_dim: int = 128
    dropout_p: float = 0.05

    def __post_init__(self):
        if not self.layers:
            raise ValueError("embedder needs at least one conv layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_channels != prev.out_channels:
                raise ValueError(
                    f"layer chain broken: {prev.out_channels} outputs feed "
                    f"{cur.in_channels} inputs"
                )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")


def init_embedder_params(cfg, seed, prefix="emb"):
    params = {}
    for i, spec in enumerate(cfg.layers):
        rng = stream(seed, "init", prefix, i)
        std = (spec.in_channels * spec.kernel_size) ** -0.5
        w = rng.normal(0.0, std, (spec.out_channels, spec.in_channels, spec.kernel_size))
        params[f"{prefix}.l{i}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
        if spec.bias:
            params[f"{prefix}.l{i}.b"] = Tensor(np.zeros(spec.out_channels, dtype=np.float32),
                                                requires_grad=True)
    rng = stream(seed, "init", prefix, "out")
    pooled = cfg.layers[-1].out_channels
    w = rng.normal(0.0, pooled**-0.5, (cfg.embedding_dim, pooled))
    params[f"{prefix}.out.w"] = Tensor(w.astype(np.float32), requires_grad=True)
    params[f"{prefix}.out.b"] = Tensor(np.zeros(cfg.embedding_dim, dtype=np.float32),
                                       requires_grad=True)
    return params


def embed_features(feats, params, cfg, training=False, step_seed=0, prefix="emb"):
    """feats: Tensor or np [B, C, T] -> Tensor [B, embedding_dim].

    Dropout masks are drawn from substreams keyed by (step_seed, layer),
    so a training step is reproducible from its seed alone.
    """
    x = feats if isinstance(feats, Tensor) else Tensor(np.asarray(feats, dtype=np.float32))
    if x.ndim != 3 or x.shape[1] != cfg.layers[0].in_channels:
        raise ValueError(
            f"expected features [B, {cfg.layers[0].in_channels}, T], got {x.shape}"
        )
    for i, spec in enumerate(cfg.layers):
        w = params[f"{prefix}.l{i}.w"]
        b = params.get(f"{prefix}.l{i}.b")
        x = nd.conv1d(x, w, b, stride=spec.stride, dilation=spec.dilation)
        x = nd.selu(x)
        if training and cfg.dropout_p > 0.0:
            x = nd.alpha_dropout(x, cfg.dropout_p, training=True,
                                 rng=stream(step_seed, "drop", i))
    x = nd.avg_pool1d(x, window=x.shape[2])
    x = nd.reshape(x, (x.shape[0], x.shape[1]))
    return nd.linear(x, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])


def embed(feature, params, cfg, training=False, step_seed=0, prefix="emb"):
    """Single feature matrix [C, T] -> np [embedding_dim]."""
    values = feature.values if hasattr(feature, "values") else np.asarray(feature)
    out = embed_features(values[None].astype(np.float32), params, cfg,
                         training=training, step_seed=step_seed, prefix=prefix)
    return out.data[0].copy()


def embed_triplet(anchor, positive, negative, params, cfg, training=False,
                  step_seed=0, prefix="emb"):
    """Embed three feature matrices with the shared parameter set.
    Returns a Tensor [3, embedding_dim] (rows: anchor, positive, negative)."""
    mats = []
    for f in (anchor, positive, negative):
        values = f.values if hasattr(f, "values") else np.asarray(f)
        mats.append(values.astype(np.float32))
    batch = np.stack(mats)
    return embed_features(batch, params, cfg, training=training,
                          step_seed=step_seed, prefix=prefix)
