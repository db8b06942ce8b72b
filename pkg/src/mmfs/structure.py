"""Structure preservation via key-token self-similarity.

The structural signature of an image is the cosine-similarity matrix of its
backbone key tokens; the structure loss is the Frobenius norm of the
difference between two such matrices, so pose/layout survive heavy
appearance changes while colors and textures stay free.
"""

import torch

from .errors import DegenerateInputError, InvalidArgumentError

SIM_EPS = 1e-8


def self_similarity(tokens, eps=SIM_EPS, guard=False):
    """Pairwise cosine similarity of token rows.

    tokens: (n, d) or batched (B, n, d) -> (n, n) / (B, n, n).  A token with
    (near-)zero norm makes cosine similarity undefined: by default this
    raises; with guard=True norms are clamped to eps instead.
    """
    if tokens.dim() not in (2, 3):
        raise InvalidArgumentError("tokens must be (n, d) or (B, n, d)")
    norms = tokens.norm(dim=-1)
    if (norms <= eps).any():
        if not guard:
            raise DegenerateInputError(
                "self-similarity undefined: a token has near-zero norm")
        norms = norms.clamp_min(eps)
    unit = tokens / norms.unsqueeze(-1)
    return unit @ unit.transpose(-2, -1)


def similarity_distance(sim_a, sim_b):
    """Frobenius norm of the difference of two similarity matrices,
    averaged over the batch dimension when present."""
    if sim_a.shape != sim_b.shape:
        raise InvalidArgumentError(
            f"similarity shape mismatch: {tuple(sim_a.shape)} vs "
            f"{tuple(sim_b.shape)}")
    diff = sim_a - sim_b
    frob = diff.pow(2).sum(dim=(-2, -1)).sqrt()
    return frob.mean()


def structure_loss(image_a, image_b, backbone, layer=None, guard=False):
    """Structural distance between two images at the backbone resolution.

    Computes key tokens for both images at `layer` (default: the backbone's
    last attention layer) and returns ||S(a) - S(b)||_F, batch-averaged.
    """
    keys_a = backbone.keys(image_a, layer)
    keys_b = backbone.keys(image_b, layer)
    if keys_a.shape[-2] != keys_b.shape[-2]:
        raise InvalidArgumentError(
            f"token count mismatch: {keys_a.shape[-2]} vs {keys_b.shape[-2]}")
    return similarity_distance(self_similarity(keys_a, guard=guard),
                               self_similarity(keys_b, guard=guard))
