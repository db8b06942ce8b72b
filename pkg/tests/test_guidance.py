"""Directional, projection and composite guidance-loss oracles."""

import math

import pytest
import torch

from mmfs.backbones import ToyBackbone, resize_for_backbone
from mmfs.config import NANO, TOY
from mmfs.errors import DegenerateInputError, InvalidArgumentError
from mmfs.guidance import (GuidancePrompt, build_token_basis,
                           directional_loss, one_shot_objective,
                           projection_loss, prompt_anchors,
                           zero_shot_objective)
from mmfs.structure import structure_loss


@pytest.fixture(scope="module")
def backbone():
    return ToyBackbone(NANO, seed=0)


def nano_images(n, seed):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, 3, NANO.resolution, NANO.resolution, generator=gen)


# -- prompts ---------------------------------------------------------------


def test_prompt_validation():
    with pytest.raises(InvalidArgumentError):
        GuidancePrompt(kind="audio")
    with pytest.raises(InvalidArgumentError):
        GuidancePrompt(kind="text", text="")
    with pytest.raises(InvalidArgumentError):
        GuidancePrompt(kind="image")


def test_prompt_embedding_unit_norm_and_cached(backbone):
    p = GuidancePrompt(kind="text", text="pop art")
    e1 = p.embedding(backbone)
    e2 = p.embedding(backbone)
    assert e1 is e2  # cached
    assert e1.norm().item() == pytest.approx(1.0, abs=1e-5)
    q = GuidancePrompt(kind="image", image=nano_images(1, 0)[0])
    assert q.embedding(backbone).norm().item() == pytest.approx(1.0, abs=1e-5)


def test_prompt_anchors_convention(backbone):
    content = nano_images(2, 1)
    embed = backbone.embed_image(content)
    text_prompt = GuidancePrompt(kind="text", text="watercolor painting")
    src, tgt = prompt_anchors(text_prompt, embed, backbone)
    assert torch.equal(src, embed)
    assert torch.allclose(tgt, backbone.embed_text("photo"))
    img_prompt = GuidancePrompt(kind="image", image=content[0])
    src, tgt = prompt_anchors(img_prompt, embed, backbone)
    assert torch.equal(src, embed) and torch.equal(tgt, embed)


# -- directional loss --------------------------------------------------------


class StubBackbone:
    """Minimal backbone stub: embed_image returns a stored vector."""

    resolution = 8

    def __init__(self, image_embed, text_embeds=None):
        self._img = image_embed
        self._text = text_embeds or {}

    def embed_image(self, image):
        return self._img

    def embed_text(self, text):
        return self._text[text]


def _directional_case(img_dir, ref_dir):
    """Directional loss with full control over both difference vectors."""
    stub = StubBackbone(image_embed=img_dir.unsqueeze(0))
    prompt = GuidancePrompt(kind="text", text="x")
    prompt._cache[id(stub)] = ref_dir
    zeros = torch.zeros_like(img_dir)
    return directional_loss(torch.zeros(1, 3, 8, 8), prompt,
                            source_anchor=zeros.unsqueeze(0),
                            target_anchor=zeros, backbone=stub)


def test_directional_loss_anchor_cases():
    v = torch.tensor([1.0, 0.0, 0.0])
    w = torch.tensor([0.0, 1.0, 0.0])
    assert _directional_case(v, v).item() == pytest.approx(0.0, abs=1e-6)
    assert _directional_case(v, w).item() == pytest.approx(1.0, abs=1e-6)
    assert _directional_case(v, -v).item() == pytest.approx(2.0, abs=1e-6)


def test_directional_loss_scale_invariant():
    v = torch.tensor([0.3, -0.7, 0.2])
    w = torch.tensor([0.5, 0.1, -0.9])
    a = _directional_case(v, w).item()
    b = _directional_case(3.0 * v, 0.25 * w).item()
    assert a == pytest.approx(b, abs=1e-6)


def test_directional_loss_zero_direction_raises():
    v = torch.tensor([1.0, 0.0, 0.0])
    with pytest.raises(DegenerateInputError):
        _directional_case(v, torch.zeros(3))
    with pytest.raises(DegenerateInputError):
        _directional_case(torch.zeros(3), v)


def test_directional_loss_through_real_backbone(backbone):
    content = nano_images(2, 2)
    stylized = nano_images(2, 3)
    embed = backbone.embed_image(content)
    prompt = GuidancePrompt(kind="text", text="pop art")
    src, tgt = prompt_anchors(prompt, embed, backbone)
    loss = directional_loss(stylized, prompt, src, tgt, backbone)
    assert 0.0 <= loss.item() <= 2.0


# -- token basis + projection loss --------------------------------------------


def test_basis_columns_orthonormal():
    torch.manual_seed(0)
    tokens = torch.randn(5, 9)  # 5 tokens in R^9: nonvacuous
    u = build_token_basis(tokens)
    assert u.shape == (9, 5)
    assert (u.t() @ u - torch.eye(5)).abs().max().item() <= 1e-5


def test_basis_projector_matches_normal_equations():
    """U U^T must equal T (T^T T)^-1 T^T built directly from the tokens."""
    torch.manual_seed(1)
    tokens = torch.randn(4, 7).double()
    u = build_token_basis(tokens)
    t_cols = tokens.t()  # (d, n)
    projector = t_cols @ torch.linalg.inv(t_cols.t() @ t_cols) @ t_cols.t()
    assert (u @ u.t() - projector).abs().max().item() <= 1e-5


def test_basis_single_token_axis():
    u = build_token_basis(torch.tensor([[1.0, 0.0, 0.0]]))
    proj = u @ u.t()
    assert torch.allclose(proj, torch.diag(torch.tensor([1.0, 0.0, 0.0])),
                          atol=1e-6)


def test_basis_vacuous_when_tokens_cover_space():
    torch.manual_seed(2)
    tokens = torch.randn(6, 4)  # n_t >= d_t
    with pytest.warns(UserWarning, match="vacuous"):
        u = build_token_basis(tokens)
    assert torch.allclose(u @ u.t(), torch.eye(4), atol=1e-5)


def test_basis_subsample_seeded():
    torch.manual_seed(3)
    tokens = torch.randn(10, 6)
    g1 = torch.Generator().manual_seed(42)
    g2 = torch.Generator().manual_seed(42)
    u1 = build_token_basis(tokens, subsample=3, generator=g1)
    u2 = build_token_basis(tokens, subsample=3, generator=g2)
    assert torch.equal(u1, u2)
    assert u1.shape == (6, 3)
    with pytest.raises(InvalidArgumentError):
        build_token_basis(tokens, subsample=11)


def test_basis_rejects_zero_tokens():
    with pytest.raises(DegenerateInputError):
        build_token_basis(torch.zeros(3, 5))


def test_projection_loss_span_membership_zero():
    torch.manual_seed(4)
    ref = torch.randn(3, 8).double()
    u = build_token_basis(ref)
    # tokens inside span(ref) project to themselves
    inside = torch.randn(5, 3).double() @ ref
    assert projection_loss(u, inside).item() == pytest.approx(0.0, abs=1e-5)


def test_projection_loss_single_axis_closed_form():
    # basis = e1; token e2 has residual e2 itself: L1 norm 1
    u = build_token_basis(torch.tensor([[1.0, 0.0, 0.0]]))
    loss = projection_loss(u, torch.tensor([[0.0, 1.0, 0.0]]))
    assert loss.item() == pytest.approx(1.0, abs=1e-6)
    # and a scaled off-span token scales the residual
    loss2 = projection_loss(u, torch.tensor([[0.0, 3.0, 4.0]]))
    assert loss2.item() == pytest.approx(7.0, abs=1e-5)


def test_projection_loss_rotation_invariant_under_basis_rotation():
    """Rotating both the reference tokens and the probe tokens by the same
    orthogonal map leaves the residual L1 geometry... (L1 is not rotation
    invariant in general, but the zero set is): in-span stays zero."""
    torch.manual_seed(5)
    ref = torch.randn(2, 6)
    q, _ = torch.linalg.qr(torch.randn(6, 6))
    inside = torch.randn(4, 2) @ ref
    u_rot = build_token_basis(ref @ q.t())
    assert projection_loss(u_rot, inside @ q.t()).item() == pytest.approx(
        0.0, abs=1e-5)


def test_projection_loss_batched_mean():
    u = build_token_basis(torch.tensor([[1.0, 0.0]]))
    batch = torch.stack([torch.tensor([[0.0, 1.0]]),
                         torch.tensor([[0.0, 3.0]])])
    assert projection_loss(u, batch).item() == pytest.approx(2.0, abs=1e-6)


def test_projection_loss_dim_mismatch():
    u = build_token_basis(torch.tensor([[1.0, 0.0, 0.0]]))
    with pytest.raises(InvalidArgumentError):
        projection_loss(u, torch.randn(2, 4))


def test_vacuous_projection_identically_zero():
    # once n_t >= d_t the projector is complete: residual 0 for any tokens
    torch.manual_seed(6)
    with pytest.warns(UserWarning):
        u = build_token_basis(torch.randn(8, 5))
    assert projection_loss(u, torch.randn(3, 5)).item() == pytest.approx(
        0.0, abs=1e-5)


# -- composite objectives -------------------------------------------------------


def test_zero_shot_objective_component_sum(backbone):
    content = nano_images(2, 7)
    stylized = nano_images(2, 8)
    prompt = GuidancePrompt(kind="text", text="a cubism style painting")
    lam = 0.7
    total, parts = zero_shot_objective(content, stylized, prompt, backbone, lam)
    resized_c = resize_for_backbone(content, backbone.resolution)
    resized_s = resize_for_backbone(stylized, backbone.resolution)
    l_st = structure_loss(resized_s, resized_c, backbone).item()
    embed = backbone.embed_image(resized_c)
    src, tgt = prompt_anchors(prompt, embed, backbone)
    l_dir = directional_loss(stylized, prompt, src, tgt, backbone).item()
    assert parts["structure"] == pytest.approx(l_st, abs=1e-6)
    assert parts["directional"] == pytest.approx(l_dir, abs=1e-6)
    assert total.item() == pytest.approx(l_st + lam * l_dir, abs=1e-6)


def test_zero_shot_lambda_zero_is_pure_structure(backbone):
    content, stylized = nano_images(1, 9), nano_images(1, 10)
    prompt = GuidancePrompt(kind="text", text="pop art")
    total, parts = zero_shot_objective(content, stylized, prompt, backbone, 0.0)
    assert total.item() == pytest.approx(parts["structure"], abs=1e-6)


def test_one_shot_objective_adds_projection(backbone):
    content, stylized = nano_images(2, 11), nano_images(2, 12)
    ref = nano_images(1, 13)[0]
    prompt = GuidancePrompt(kind="image", image=ref)
    ref_tokens = backbone.tokens(ref.unsqueeze(0)).squeeze(0)
    basis = build_token_basis(ref_tokens, subsample=8,
                              generator=torch.Generator().manual_seed(0))
    lam_c, lam_p = 0.5, 2.0
    total, parts = one_shot_objective(content, stylized, prompt, backbone,
                                      lam_c, lam_p, basis)
    zero_total, _ = zero_shot_objective(content, stylized, prompt, backbone,
                                        lam_c)
    layer = min(4, backbone.num_layers)
    out_tokens = backbone.tokens(resize_for_backbone(stylized,
                                                     backbone.resolution), layer)
    l_proj = projection_loss(basis, out_tokens).item()
    assert parts["projection"] == pytest.approx(l_proj, abs=1e-6)
    assert total.item() == pytest.approx(zero_total.item() + lam_p * l_proj,
                                         abs=1e-5)


def test_one_shot_requires_image_prompt(backbone):
    prompt = GuidancePrompt(kind="text", text="pop art")
    with pytest.raises(InvalidArgumentError):
        one_shot_objective(nano_images(1, 14), nano_images(1, 15), prompt,
                           backbone, 1.0, 1.0, torch.eye(backbone.d_t))
