"""DCGAN-style generator and discriminator, optionally label-conditioned.

The conditional generator adds the scalar label to every entry of the
feature map produced by its first linear layer. The conditional
discriminator maps the label through one linear layer and adds the inner
product of that embedding with the image features to its logit.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from ..exceptions import DimensionMismatchError


def inject_label_generator(feature_map: torch.Tensor, label) -> torch.Tensor:
    label = torch.as_tensor(label, dtype=feature_map.dtype, device=feature_map.device)
    if label.dim() == 0:
        return feature_map + label
    return feature_map + label.view(-1, *([1] * (feature_map.dim() - 1)))


def project_label_discriminator(features: torch.Tensor, label_embedding: torch.Tensor) -> torch.Tensor:
    """Per-sample ``<features, label_embedding>``."""
    if features.shape != label_embedding.shape:
        raise DimensionMismatchError(
            f"features {tuple(features.shape)} and label embedding {tuple(label_embedding.shape)} differ")
    return (features * label_embedding).sum(dim=-1)


def _n_blocks(image_size: int) -> int:
    k = int(round(math.log2(image_size)))
    if 2 ** k != image_size or image_size < 32:
        raise ValueError(f"image_size must be a power of two >= 32, got {image_size}")
    return k - 2


def _init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


class Generator(nn.Module):
    def __init__(self, latent_dim=100, image_size=32, feature_map_base=64, conditional=False):
        super().__init__()
        n_up = _n_blocks(image_size)
        self.latent_dim = latent_dim
        self.conditional = conditional
        self.start_channels = feature_map_base * 2 ** (n_up - 1)
        self.linear = nn.Linear(latent_dim, self.start_channels * 16)
        layers = [nn.BatchNorm2d(self.start_channels), nn.ReLU(True)]
        ch = self.start_channels
        for _ in range(n_up - 1):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1, bias=False), nn.BatchNorm2d(ch // 2), nn.ReLU(True)]
            ch //= 2
        layers += [nn.ConvTranspose2d(ch, 3, 4, 2, 1), nn.Tanh()]
        self.main = nn.Sequential(*layers)
        self.apply(_init_weights)

    def forward(self, z, labels=None):
        h = self.linear(z)
        if self.conditional:
            h = inject_label_generator(h, labels)
        return self.main(h.view(-1, self.start_channels, 4, 4))


class Discriminator(nn.Module):
    """Returns logits."""

    def __init__(self, image_size=32, feature_map_base=64, conditional=False):
        super().__init__()
        n_down = _n_blocks(image_size)
        self.conditional = conditional
        layers = [nn.Conv2d(3, feature_map_base, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        ch = feature_map_base
        for _ in range(n_down - 1):
            layers += [nn.Conv2d(ch, ch * 2, 4, 2, 1, bias=False), nn.BatchNorm2d(ch * 2), nn.LeakyReLU(0.2, True)]
            ch *= 2
        self.main = nn.Sequential(*layers)
        self.feature_dim = ch * 16
        self.out = nn.Linear(self.feature_dim, 1)
        if conditional:
            self.label_embed = nn.Linear(1, self.feature_dim)
        self.apply(_init_weights)

    def forward(self, x, labels=None):
        h = self.main(x).flatten(1)
        logit = self.out(h).squeeze(-1)
        if self.conditional:
            emb = self.label_embed(labels.view(-1, 1).to(h.dtype))
            logit = logit + project_label_discriminator(h, emb)
        return logit
