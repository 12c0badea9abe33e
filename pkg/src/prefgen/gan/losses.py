"""Vicinal discriminator losses for continuous labels, and the generator loss.

For a target label ``t = y_j + eps`` each real (or fake) image ``i`` gets a
weight ``w_ji``. The hard variant uses the indicator ``|t - y_i| <= kappa``
divided by the vicinity size; the soft variant uses Gaussian weights
``exp(-nu (t - y_i)^2)`` normalized to sum to one. The discriminator loss is

    -C1/M_r sum_j E_eps sum_i w_ji log D(x_i^r, t_j)
    -C2/M_g sum_j E_eps sum_i w_ji log(1 - D(x_i^g, t_j))

with the expectation over ``eps ~ N(0, sigma^2)`` replaced by an average over
``mc_samples`` draws. The fake-side weights are normalized over the fake
batch, so they sum to one just like the real-side weights.

Discriminator outputs may be given per image, shape ``(M,)``, when they do
not depend on the target label, or per (draw, target, image), shape
``(S, M, M)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..exceptions import ConfigError, DegenerateVicinityError

CLAMP = 1e-7


@dataclass(frozen=True)
class VicinalConfig:
    sigma: float
    kappa: float
    kind: str = "hard"
    c1: float = 1.0
    c2: float = 1.0
    nu: float | None = None
    mc_samples: int = 1

    def __post_init__(self):
        if self.kind not in ("hard", "soft"):
            raise ConfigError(f"kind must be 'hard' or 'soft', got {self.kind!r}")
        if self.sigma < 0 or self.kappa < 0:
            raise ConfigError("sigma and kappa must be non-negative")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("c1 and c2 must be positive")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be at least 1")
        if self.kind == "soft" and not self.soft_nu > 0:
            raise ConfigError("soft vicinity needs nu > 0 (or kappa > 0 to default nu = 1/kappa^2)")

    @property
    def soft_nu(self) -> float:
        if self.nu is not None:
            return float(self.nu)
        return 1.0 / self.kappa ** 2 if self.kappa > 0 else float("nan")


def _tensor(x, like=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def vicinity_weights(targets, labels, vcfg: VicinalConfig, strict: bool = True) -> torch.Tensor:
    """Normalized weights ``w[..., j, i]`` of label ``i`` for target ``j``.

    ``targets`` has any leading shape ``(..., M_t)``; ``labels`` is ``(M,)``.
    Hard rows with an empty vicinity are all zero; when every row is empty
    and ``strict`` is set a :class:`DegenerateVicinityError` is raised.
    """
    labels = _tensor(labels)
    targets = _tensor(targets, labels)
    diff = targets.unsqueeze(-1) - labels
    if vcfg.kind == "hard":
        inside = (diff.abs() <= vcfg.kappa).to(labels.dtype)
        counts = inside.sum(dim=-1, keepdim=True)
        if strict and bool((counts == 0).all()):
            raise DegenerateVicinityError(
                f"no label lies within kappa={vcfg.kappa} of any target; increase kappa")
        return inside / counts.clamp_min(1.0)
    return torch.softmax(-vcfg.soft_nu * diff ** 2, dim=-1)


def draw_label_noise(shape, sigma: float, generator=None, dtype=torch.float64) -> torch.Tensor:
    if sigma == 0:
        return torch.zeros(shape, dtype=dtype)
    return sigma * torch.randn(shape, generator=generator, dtype=dtype)


def _log_d(d, from_logits: bool, fake: bool):
    if from_logits:
        return F.logsigmoid(-d) if fake else F.logsigmoid(d)
    d = d.clamp(CLAMP, 1.0 - CLAMP)
    return torch.log1p(-d) if fake else torch.log(d)


def _vicinal_term(d, labels, eps, vcfg, from_logits, fake):
    labels = _tensor(labels)
    d = _tensor(d, labels)
    eps = _tensor(eps, labels)
    if eps.dim() == 1:
        eps = eps.unsqueeze(0)
    w = vicinity_weights(labels.unsqueeze(0) + eps, labels, vcfg)
    log_d = _log_d(d, from_logits, fake)
    if log_d.dim() == 1:
        log_d = log_d.expand_as(w)
    m = labels.shape[0]
    return -(w * log_d).sum(dim=(-1, -2)).mean() / m


def vicinal_discriminator_loss(d_real, real_labels, d_fake, fake_labels, vcfg: VicinalConfig, *,
                               eps_real=None, eps_fake=None, generator=None, from_logits=False):
    """Hard or soft vicinal discriminator loss, chosen by ``vcfg.kind``.

    ``eps_real``/``eps_fake`` fix the label-noise draws, shape ``(S, M)``;
    when omitted they are drawn from ``N(0, sigma^2)``.
    """
    real_labels = _tensor(real_labels)
    fake_labels = _tensor(fake_labels)
    if eps_real is None:
        eps_real = draw_label_noise((vcfg.mc_samples, real_labels.shape[0]), vcfg.sigma, generator,
                                    real_labels.dtype)
    if eps_fake is None:
        eps_fake = draw_label_noise((vcfg.mc_samples, fake_labels.shape[0]), vcfg.sigma, generator,
                                    fake_labels.dtype)
    real = _vicinal_term(d_real, real_labels, eps_real, vcfg, from_logits, fake=False)
    fake = _vicinal_term(d_fake, fake_labels, eps_fake, vcfg, from_logits, fake=True)
    return vcfg.c1 * real + vcfg.c2 * fake


def hvdl_loss(d_real, real_labels, d_fake, fake_labels, vcfg: VicinalConfig, **kwargs):
    if vcfg.kind != "hard":
        raise ConfigError("hvdl_loss needs a hard vicinal config")
    return vicinal_discriminator_loss(d_real, real_labels, d_fake, fake_labels, vcfg, **kwargs)


def svdl_loss(d_real, real_labels, d_fake, fake_labels, vcfg: VicinalConfig, **kwargs):
    if vcfg.kind != "soft":
        raise ConfigError("svdl_loss needs a soft vicinal config")
    return vicinal_discriminator_loss(d_real, real_labels, d_fake, fake_labels, vcfg, **kwargs)


def gan_discriminator_loss(d_real, d_fake, from_logits=False):
    """Unconditional loss ``-mean log D(real) - mean log(1 - D(fake))``."""
    d_real = _tensor(d_real)
    d_fake = _tensor(d_fake, d_real)
    return -_log_d(d_real, from_logits, False).mean() - _log_d(d_fake, from_logits, True).mean()


def generator_loss(d_fake, vcfg: VicinalConfig | None = None, from_logits=False):
    """``-mean log D(G(z, y + eps), y + eps)``.

    ``d_fake`` holds discriminator outputs on fakes generated at their
    perturbed labels, shape ``(M,)`` or ``(S, M)`` for several noise draws.
    """
    return -_log_d(_tensor(d_fake), from_logits, False).mean()


def sample_vicinity_indices(targets, labels, vcfg: VicinalConfig, generator=None) -> torch.Tensor:
    """Pick one image per target with probability equal to its vicinity weight.

    Averaging ``log D`` over the picked images is an unbiased estimate of the
    weighted sums in the vicinal loss. Rows with an empty vicinity get ``-1``.
    """
    w = vicinity_weights(targets, labels, vcfg, strict=False)
    empty = w.sum(dim=-1) == 0
    safe = torch.where(empty.unsqueeze(-1), torch.ones_like(w), w)
    idx = torch.multinomial(safe.to(torch.float64), 1, generator=generator).squeeze(-1)
    return torch.where(empty, torch.full_like(idx, -1), idx)
