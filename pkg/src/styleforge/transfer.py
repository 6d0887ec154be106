"""Feature-space stylization: AdaIN, ZCA whitening/coloring and the beta blend.

Feature maps are tensors shaped (C, H, W). Statistics are computed in
float64 and results are cast back to the input dtype.
"""

from dataclasses import dataclass

import torch

from .errors import ChannelMismatch, ShapeMismatch

EPS = 1e-5
EPS_RANK = 1e-5


@dataclass(frozen=True)
class ChannelStats:
    mean: torch.Tensor
    std: torch.Tensor


@dataclass(frozen=True)
class CovEigensystem:
    mean: torch.Tensor
    eigenvalues: torch.Tensor  # nonincreasing
    eigenvectors: torch.Tensor  # columns
    rank: int

    def retained(self, eps_rank=EPS_RANK):
        return _retained(self.eigenvalues, eps_rank)


def _retained(eigenvalues, eps_rank):
    # threshold is relative to the largest eigenvalue; a zero spectrum keeps nothing
    top = float(eigenvalues[0]) if len(eigenvalues) else 0.0
    if top <= 0:
        return torch.zeros_like(eigenvalues, dtype=torch.bool)
    return eigenvalues > eps_rank * top


def _flat(F):
    if F.dim() != 3:
        raise ValueError(f"feature map must be (C, H, W), got shape {tuple(F.shape)}")
    return F.reshape(F.shape[0], -1).to(torch.float64)


def channel_stats(F):
    x = _flat(F)
    return ChannelStats(mean=x.mean(dim=1), std=x.std(dim=1, unbiased=False))


def instance_norm(F, eps=EPS):
    x = _flat(F)
    mean = x.mean(dim=1, keepdim=True)
    std = x.std(dim=1, unbiased=False, keepdim=True)
    return ((x - mean) / (std + eps)).reshape(F.shape).to(F.dtype)


def adain(Fc, style_stats, eps=EPS):
    x = _flat(Fc)
    if style_stats.mean.shape[0] != x.shape[0]:
        raise ChannelMismatch(f"content has {x.shape[0]} channels, style stats {style_stats.mean.shape[0]}")
    mean = x.mean(dim=1, keepdim=True)
    std = x.std(dim=1, unbiased=False, keepdim=True)
    s_mean = style_stats.mean.to(torch.float64).unsqueeze(1)
    s_std = style_stats.std.to(torch.float64).unsqueeze(1)
    out = s_std * (x - mean) / (std + eps) + s_mean
    return out.reshape(Fc.shape).to(Fc.dtype)


def cov_eigensystem(F, eps_rank=EPS_RANK):
    """Eigendecomposition of the centered channel covariance (HW - 1 denominator)."""
    x = _flat(F)
    n = x.shape[1]
    if n < 2:
        raise ValueError("covariance needs at least 2 spatial positions")
    mean = x.mean(dim=1)
    centered = x - mean.unsqueeze(1)
    cov = centered @ centered.T / (n - 1)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = torch.linalg.eigh(cov)
    vals = vals.flip(0).clamp_min(0.0)
    vecs = vecs.flip(1)
    rank = int(_retained(vals, eps_rank).sum())
    return CovEigensystem(mean=mean, eigenvalues=vals, eigenvectors=vecs, rank=rank)


def whiten(Fc, content_eig=None, eps_rank=EPS_RANK):
    """Centered content features mapped to identity covariance on the retained subspace.

    Returns a float64 (C, HW) matrix.
    """
    x = _flat(Fc)
    eig = content_eig if content_eig is not None else cov_eigensystem(Fc, eps_rank)
    keep = eig.retained(eps_rank)
    E = eig.eigenvectors[:, keep]
    inv_sqrt = eig.eigenvalues[keep].rsqrt()
    centered = x - eig.mean.unsqueeze(1)
    return E @ (inv_sqrt.unsqueeze(1) * (E.T @ centered))


def color(whitened, style, eps_rank=EPS_RANK):
    keep = style.retained(eps_rank)
    E = style.eigenvectors[:, keep].to(torch.float64)
    sqrt_vals = style.eigenvalues[keep].to(torch.float64).sqrt()
    return E @ (sqrt_vals.unsqueeze(1) * (E.T @ whitened)) + style.mean.to(torch.float64).unsqueeze(1)


def wct(Fc, style, eps_rank=EPS_RANK):
    if style.mean.shape[0] != Fc.shape[0]:
        raise ChannelMismatch(f"content has {Fc.shape[0]} channels, style eigensystem {style.mean.shape[0]}")
    out = color(whiten(Fc, eps_rank=eps_rank), style, eps_rank)
    return out.reshape(Fc.shape).to(Fc.dtype)


def blend(F_transferred, F_content, beta):
    if F_transferred.shape != F_content.shape:
        raise ShapeMismatch(f"cannot blend {tuple(F_transferred.shape)} with {tuple(F_content.shape)}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0,1], got {beta}")
    # endpoints are returned untouched so beta=0 reproduces the content path bitwise
    if beta == 0:
        return F_content
    if beta == 1:
        return F_transferred
    return beta * F_transferred + (1.0 - beta) * F_content
