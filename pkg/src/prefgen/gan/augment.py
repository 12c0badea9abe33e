"""Differentiable augmentations applied to both real and generated batches.

Batches are NCHW tensors. All random draws come from an optional
``torch.Generator`` so a step can apply the exact same transform twice.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

POLICIES = ("color", "translation", "cutout")


def _rand(n, generator, like):
    return torch.rand(n, 1, 1, 1, generator=generator, dtype=like.dtype).to(like.device)


def rand_brightness(x, generator=None, r=None):
    r = _rand(x.size(0), generator, x) if r is None else r
    return x + (r - 0.5)


def rand_saturation(x, generator=None, r=None):
    r = _rand(x.size(0), generator, x) if r is None else r
    mean = x.mean(dim=1, keepdim=True)
    return (x - mean) * (r * 2) + mean


def rand_contrast(x, generator=None, r=None):
    r = _rand(x.size(0), generator, x) if r is None else r
    mean = x.mean(dim=[1, 2, 3], keepdim=True)
    return (x - mean) * (r + 0.5) + mean


def translate(x, shift_h, shift_w):
    """Shift each image by integer offsets, filling with zeros."""
    n, _, h, w = x.shape
    padded = F.pad(x, [1, 1, 1, 1])
    rows = torch.arange(h, device=x.device).view(1, h, 1) + shift_h.view(n, 1, 1) + 1
    cols = torch.arange(w, device=x.device).view(1, 1, w) + shift_w.view(n, 1, 1) + 1
    rows = rows.clamp(0, h + 1).expand(n, h, w)
    cols = cols.clamp(0, w + 1).expand(n, h, w)
    batch = torch.arange(n, device=x.device).view(n, 1, 1).expand(n, h, w)
    return padded.permute(0, 2, 3, 1)[batch, rows, cols].permute(0, 3, 1, 2)


def rand_translation(x, generator=None, ratio=0.125):
    sh, sw = int(x.size(2) * ratio + 0.5), int(x.size(3) * ratio + 0.5)
    shift_h = torch.randint(-sh, sh + 1, (x.size(0),), generator=generator).to(x.device)
    shift_w = torch.randint(-sw, sw + 1, (x.size(0),), generator=generator).to(x.device)
    return translate(x, shift_h, shift_w)


def rand_cutout(x, generator=None, ratio=0.5):
    n, _, h, w = x.shape
    ch, cw = int(h * ratio + 0.5), int(w * ratio + 0.5)
    off_h = torch.randint(0, h + (1 - ch % 2), (n, 1, 1), generator=generator).to(x.device)
    off_w = torch.randint(0, w + (1 - cw % 2), (n, 1, 1), generator=generator).to(x.device)
    rows = torch.arange(h, device=x.device).view(1, h, 1)
    cols = torch.arange(w, device=x.device).view(1, 1, w)
    inside = ((rows - off_h + ch // 2) >= 0) & ((rows - off_h + ch // 2) < ch) \
        & ((cols - off_w + cw // 2) >= 0) & ((cols - off_w + cw // 2) < cw)
    return x * (~inside).unsqueeze(1).to(x.dtype)


AUGMENT_FNS = {
    "color": (rand_brightness, rand_saturation, rand_contrast),
    "translation": (rand_translation,),
    "cutout": (rand_cutout,),
}


def parse_policy(policy) -> tuple[str, ...]:
    if policy is None:
        return ()
    tokens = [p.strip() for p in policy.split(",")] if isinstance(policy, str) else list(policy)
    tokens = [t for t in tokens if t]
    unknown = [t for t in tokens if t not in AUGMENT_FNS]
    if unknown:
        raise ValueError(f"unknown augmentation policy {unknown}; choose from {POLICIES}")
    return tuple(tokens)


def diff_augment(x, policy="color,translation,cutout", seed=None, generator=None):
    """Apply the policy's transforms in order; an empty policy is the identity."""
    tokens = parse_policy(policy)
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    for token in tokens:
        for fn in AUGMENT_FNS[token]:
            x = fn(x, generator=generator)
    return x.contiguous()
