"""Quality metrics: distributional distance of stylized outputs, identity
preservation, and stylization diversity, over pluggable embedders."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, InvalidArgumentError, NumericalHealthError

NEG_EIG_TOL = -1e-6


@dataclass
class GaussianStats:
    """First two moments of a feature set."""
    mean: np.ndarray
    cov: np.ndarray
    count: int


def gaussian_stats(features):
    """Mean and unbiased covariance of (N, D) features (N >= 2)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise InvalidArgumentError("features must be (N, D)")
    if feats.shape[0] < 2:
        raise InvalidArgumentError(
            "need at least 2 feature rows for a covariance estimate")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (feats.shape[0] - 1)
    return GaussianStats(mean=mean, cov=cov, count=feats.shape[0])


def sym_sqrt(mat):
    """Matrix square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below the numerical-noise floor raise; small negatives are
    clamped to zero."""
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < NEG_EIG_TOL:
        raise NumericalHealthError(
            f"matrix has negative eigenvalue {vals.min():.3e}; not PSD "
            "within tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(stats_a: GaussianStats, stats_b: GaussianStats):
    """Frechet distance between two Gaussians:
    |mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a C_b)^{1/2}).

    The cross term uses the symmetrized product sqrt(C_a) C_b sqrt(C_a),
    which is symmetric PSD whenever the inputs are, keeping the matrix
    square root in real arithmetic."""
    mu_a, cov_a = stats_a.mean, stats_a.cov
    mu_b, cov_b = stats_b.mean, stats_b.cov
    if mu_a.shape != mu_b.shape:
        raise InvalidArgumentError("feature dimensions differ")
    diff = mu_a - mu_b
    sqrt_a = sym_sqrt(cov_a)
    cross = sym_sqrt(sqrt_a @ cov_b @ sqrt_a)
    fid = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross)
    return float(max(fid, 0.0))


def arcface_dist(embed_a, embed_b, eps=1e-8):
    """Identity distance: 1 - cosine similarity of identity embeddings.

    Accepts single vectors or batches; returns the mean over the batch."""
    a = torch.as_tensor(embed_a, dtype=torch.float32)
    b = torch.as_tensor(embed_b, dtype=torch.float32)
    if a.shape != b.shape:
        raise InvalidArgumentError("embedding shapes differ")
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if (na <= eps).any() or (nb <= eps).any():
        raise DegenerateInputError("zero-norm identity embedding")
    cos = (a * b).sum(dim=-1) / (na * nb)
    return (1.0 - cos).mean().item()


def lpips_distance(image_a, image_b, embedder, eps=1e-10):
    """Perceptual distance between two image batches.

    For each embedder layer, features are unit-normalized along channels;
    squared differences are summed over channels, averaged over space, and
    summed across layers (all layer weights 1).  Returns the batch mean."""
    if image_a.shape != image_b.shape:
        raise InvalidArgumentError("image shapes differ")
    feats_a = embedder.feature_maps(image_a)
    feats_b = embedder.feature_maps(image_b)
    total = None
    for fa, fb in zip(feats_a, feats_b):
        ua = fa / (fa.norm(dim=1, keepdim=True) + eps)
        ub = fb / (fb.norm(dim=1, keepdim=True) + eps)
        d = (ua - ub).pow(2).sum(dim=1).mean(dim=(1, 2))
        total = d if total is None else total + d
    return total.mean().item()


class ToyPerceptualEmbedder(torch.nn.Module):
    """Fixed random conv stack providing feature maps for the metrics.

    Stand-in for a pretrained perceptual/Inception network: three stride-2
    convs with seeded weights, exposing per-stage feature maps and a pooled
    feature vector."""

    def __init__(self, channels=(16, 32, 64), img_channels=3, seed=7):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        c_in = img_channels
        for c_out in channels:
            conv = torch.nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  / math.sqrt(c_in * 9))
                conv.bias.zero_()
            convs.append(conv)
            c_in = c_out
        self.convs = torch.nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def feature_maps(self, image):
        feats = []
        x = image
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def features(self, image):
        """Pooled vector per image, (B, C_last) — the FID feature space."""
        return self.feature_maps(image)[-1].mean(dim=(2, 3))


def eval_random_stylization(model, real_images, style_set, n_samples, seed, *,
                            embedder, identity_fn):
    """Random-stylization protocol over `n_samples` content images.

    Each content image is stylized twice with independent random style
    codes.  Reports:
      fid              — stylized outputs (first pass) vs the style set
      arcface_dist     — mean identity distance input vs stylized
      lpips            — mean perceptual distance between the two passes
    """
    if style_set is None or len(style_set) == 0:
        raise InvalidArgumentError("style set is empty")
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    if n_samples > len(real_images):
        raise InvalidArgumentError(
            f"n_samples {n_samples} exceeds available images {len(real_images)}")
    gen = torch.Generator().manual_seed(seed)
    inputs = real_images[:n_samples]
    with torch.no_grad():
        out_a = model.stylize_random(inputs, generator=gen)
        out_b = model.stylize_random(inputs, generator=gen)
        stats_style = gaussian_stats(embedder.features(style_set).numpy())
        stats_out = gaussian_stats(embedder.features(out_a).numpy())
        fid = frechet_distance(stats_style, stats_out)
        ident = arcface_dist(identity_fn(inputs), identity_fn(out_a))
        lpips = lpips_distance(out_a, out_b, embedder)
    return {"fid": fid, "arcface_dist": ident, "lpips": lpips}
