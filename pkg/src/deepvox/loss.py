"""Cosine triplet loss.

Per triplet: cos(anchor, negative) - cos(anchor, positive) + margin,
hinged at zero by default (the unhinged raw difference is selectable, as
is sum instead of mean reduction).  Operates on embedding Tensors so the
gradient flows back through both similarity terms.
"""

from dataclasses import dataclass

from . import nd


@dataclass(frozen=True)
class TripletLossConfig:
    margin_alpha: float = 0.2
    hinge: bool = True
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.margin_alpha <= 2.0:
            raise ValueError(f"margin must be in [0, 2] (cosine range), got {self.margin_alpha}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def cosine_triplet_loss(anchor, positive, negative, cfg=TripletLossConfig()):
    """anchor/positive/negative: Tensor [N, D] (or [D]) -> scalar Tensor."""
    cos_ap = nd.cosine(anchor, positive)
    cos_an = nd.cosine(anchor, negative)
    terms = cos_an - cos_ap + cfg.margin_alpha
    if cfg.hinge:
        terms = nd.relu(terms)
    if terms.ndim == 0:
        return terms
    return terms.mean() if cfg.reduction == "mean" else terms.sum()
