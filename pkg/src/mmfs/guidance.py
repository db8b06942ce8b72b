"""Prompt-driven guidance losses for decoder fine-tuning.

Zero-shot: structure preservation plus a directional embedding loss that
moves outputs along a source->target direction in the backbone's joint
embedding space.  One-shot adds a token-projection loss tying output tokens
to the subspace spanned by a reference image's tokens.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import torch

from .backbones import resize_for_backbone
from .errors import DegenerateInputError, InvalidArgumentError
from .structure import structure_loss

COS_EPS = 1e-8
# joint-space description of the source domain, used as the text-mode anchor
SOURCE_DOMAIN_TEXT = "photo"
# token layer for the projection loss (clamped to the backbone's depth)
PROJECTION_LAYER = 4


@dataclass
class GuidancePrompt:
    """A stylization target: a text prompt or a reference image.

    kind: "text" or "image".  The joint-space embedding is computed once
    per backbone and cached."""
    kind: str
    text: Optional[str] = None
    image: Optional[torch.Tensor] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise InvalidArgumentError(f"unknown guidance kind {self.kind!r}")
        if self.kind == "text" and not self.text:
            raise InvalidArgumentError("text prompt must be non-empty")
        if self.kind == "image" and self.image is None:
            raise InvalidArgumentError("image prompt requires a reference image")

    def embedding(self, backbone):
        """Unit-norm joint embedding of the prompt, cached per backbone."""
        key = id(backbone)
        if key not in self._cache:
            if self.kind == "text":
                self._cache[key] = backbone.embed_text(self.text)
            else:
                img = self.image
                if img.dim() == 3:
                    img = img.unsqueeze(0)
                img = resize_for_backbone(img, backbone.resolution)
                self._cache[key] = backbone.embed_image(img).squeeze(0)
        return self._cache[key]


def prompt_anchors(prompt, content_embed, backbone):
    """Default (source_anchor, target_anchor) for the directional loss.

    The image direction is always measured from the content image's
    embedding.  The target direction is measured from the source domain's
    text description for text prompts, and from the content embedding for
    image prompts."""
    if prompt.kind == "text":
        return content_embed, backbone.embed_text(SOURCE_DOMAIN_TEXT)
    return content_embed, content_embed


def directional_loss(stylized, prompt, source_anchor, target_anchor, backbone,
                     eps=COS_EPS):
    """1 - cos(F(I_s) - source_anchor, F(prompt) - target_anchor).

    Both difference vectors must be nonzero; a zero direction means the
    guidance is undefined (e.g. the prompt equals its anchor)."""
    embed_s = backbone.embed_image(
        resize_for_backbone(stylized, backbone.resolution))
    d_img = embed_s - source_anchor
    d_ref = prompt.embedding(backbone) - target_anchor
    if d_ref.dim() == 1:
        d_ref = d_ref.unsqueeze(0).expand_as(d_img)
    n_img = d_img.norm(dim=-1)
    n_ref = d_ref.norm(dim=-1)
    if (n_img <= eps).any() or (n_ref <= eps).any():
        raise DegenerateInputError(
            "directional loss undefined: a direction vector is zero")
    cos = (d_img * d_ref).sum(dim=-1) / (n_img * n_ref)
    return (1.0 - cos).mean()


def build_token_basis(tokens, subsample=None, generator=None):
    """Orthonormal basis of the reference-token subspace.

    tokens: (n_t, d_t) rows, arranged as a (d_t, n_t) column matrix for the
    SVD; returns U (d_t, min(d_t, n_t)) whose columns are left singular
    vectors (null-singular-value vectors kept, so rank deficiency is fine).

    If n_t >= d_t the tokens generically span all of R^d_t and the
    projection loss is vacuous; a warning is emitted.  `subsample`
    optionally keeps only that many reference tokens (seeded, without
    replacement) before the SVD.
    """
    if tokens.dim() != 2:
        raise InvalidArgumentError("reference tokens must be (n, d)")
    if not tokens.abs().sum() > 0:
        raise DegenerateInputError("reference tokens are all zero")
    if subsample is not None:
        if not 1 <= subsample <= tokens.shape[0]:
            raise InvalidArgumentError(
                f"subsample {subsample} out of range 1..{tokens.shape[0]}")
        idx = torch.randperm(tokens.shape[0], generator=generator)[:subsample]
        tokens = tokens[idx]
    n_t, d_t = tokens.shape
    if n_t >= d_t:
        warnings.warn(
            f"reference tokens span the full feature space ({n_t} tokens >= "
            f"{d_t} dims); projection loss is vacuous — consider token "
            "subsampling", stacklevel=2)
    u, _, _ = torch.linalg.svd(tokens.t(), full_matrices=False)
    return u


def projection_loss(basis, tokens):
    """L1 norm of the residual of projecting tokens onto the basis span.

    basis: (d_t, r) orthonormal columns; tokens: (n, d_t) or (B, n, d_t).
    Loss = sum of |U U^T t - t| entries, batch-averaged when batched."""
    if basis.shape[0] != tokens.shape[-1]:
        raise InvalidArgumentError(
            f"basis dimension {basis.shape[0]} does not match token "
            f"dimension {tokens.shape[-1]}")
    cols = tokens.transpose(-2, -1)              # (..., d_t, n)
    recon = basis @ (basis.transpose(0, 1) @ cols)
    resid = (recon - cols).abs().sum(dim=(-2, -1))
    return resid.mean() if resid.dim() else resid


def zero_shot_objective(content, stylized, prompt, backbone, lambda_c, *,
                        source_anchor=None, target_anchor=None,
                        structure_layer=None):
    """structure_loss(I_s, I_r) + lambda_c * directional_loss.

    Anchors default to the convention in `prompt_anchors`.  Returns
    (total, parts) with detached part values for logging."""
    l_st = structure_loss(
        resize_for_backbone(stylized, backbone.resolution),
        resize_for_backbone(content, backbone.resolution),
        backbone, layer=structure_layer)
    if source_anchor is None or target_anchor is None:
        with torch.no_grad():
            content_embed = backbone.embed_image(
                resize_for_backbone(content, backbone.resolution))
        default_src, default_tgt = prompt_anchors(prompt, content_embed, backbone)
        source_anchor = default_src if source_anchor is None else source_anchor
        target_anchor = default_tgt if target_anchor is None else target_anchor
    l_dir = directional_loss(stylized, prompt, source_anchor, target_anchor,
                             backbone)
    total = l_st + lambda_c * l_dir
    return total, {"structure": float(l_st.detach()),
                   "directional": float(l_dir.detach())}


def one_shot_objective(content, stylized, prompt, backbone, lambda_c,
                       lambda_proj, basis, *, token_layer=None, **kwargs):
    """Zero-shot objective plus the reference-token projection loss.

    `basis` is the (frozen) SVD basis of the reference image's tokens,
    computed once per fine-tune job by build_token_basis."""
    if prompt.kind != "image":
        raise InvalidArgumentError("one-shot guidance requires an image prompt")
    total, parts = zero_shot_objective(content, stylized, prompt, backbone,
                                       lambda_c, **kwargs)
    if token_layer is None:
        token_layer = min(PROJECTION_LAYER, backbone.num_layers)
    out_tokens = backbone.tokens(
        resize_for_backbone(stylized, backbone.resolution), token_layer)
    l_proj = projection_loss(basis, out_tokens)
    parts["projection"] = float(l_proj.detach())
    return total + lambda_proj * l_proj, parts
