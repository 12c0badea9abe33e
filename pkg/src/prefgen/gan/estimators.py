"""Trainable GAN estimators with a scikit-learn style interface.

``DCGAN().fit(images)`` trains the unconditional baseline;
``CcGAN().fit(images, labels)`` trains the label-conditioned model. Both
expose ``sample(n, label=None, seed=0)`` returning images in ``[0, 1]``
with shape ``(n, H, W, 3)``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigError, DataIntegrityError, LabelRangeError
from .augment import diff_augment, parse_policy
from .hyper import KAPPA_FACTOR, rule_of_thumb_hyperparams
from .losses import (VicinalConfig, gan_discriminator_loss, generator_loss,
                     sample_vicinity_indices)
from .nets import Discriminator, Generator

log = logging.getLogger(__name__)

LABEL_TOL = 1e-9
_MAX_EPS_REDRAWS = 20


@dataclass(frozen=True)
class GanConfig:
    image_size: int = 32
    latent_dim: int = 100
    batch_size: int = 32
    learning_rate: float = 2e-4
    iterations: int = 2000
    feature_map_base: int = 64
    d_steps_per_iter: int = 1
    augment_policy: str = "color,translation,cutout"
    seed: int = 0

    def __post_init__(self):
        for name in ("image_size", "latent_dim", "batch_size", "iterations", "feature_map_base", "d_steps_per_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        size = self.image_size
        if size < 32 or size & (size - 1):
            raise ConfigError(f"image_size must be a power of two >= 32, got {size}")
        parse_policy(self.augment_policy)

    @classmethod
    def dcgan_full_scale(cls, **overrides):
        base = dict(image_size=128, latent_dim=100, batch_size=32, learning_rate=2e-4, iterations=275_000,
                    feature_map_base=64, d_steps_per_iter=1)
        return cls(**{**base, **overrides})

    @classmethod
    def ccgan_full_scale(cls, **overrides):
        base = dict(image_size=128, latent_dim=256, batch_size=64, learning_rate=1e-4, iterations=20_000,
                    feature_map_base=64, d_steps_per_iter=2)
        return cls(**{**base, **overrides})


def images_to_tensor(images, image_size=None) -> torch.Tensor:
    """``(n, H, W, 3)`` floats in ``[0, 1]`` -> NCHW tensor in ``[-1, 1]``."""
    if isinstance(images, (list, tuple)):
        shapes = {np.asarray(im).shape for im in images}
        if len(shapes) > 1:
            raise DataIntegrityError(f"images have different sizes: {sorted(shapes)}")
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DataIntegrityError(f"expected a (n, H, W, 3) image batch, got shape {arr.shape}")
    if image_size is not None and arr.shape[1:3] != (image_size, image_size):
        raise DataIntegrityError(f"images are {arr.shape[1]}x{arr.shape[2]}, config expects {image_size}x{image_size}")
    return torch.from_numpy(arr).permute(0, 3, 1, 2).mul(2.0).sub(1.0).contiguous()


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    return x.detach().add(1.0).div(2.0).clamp(0.0, 1.0).permute(0, 2, 3, 1).cpu().numpy().astype(np.float64)


class _BaseGAN(BaseEstimator):
    conditional = False

    def __init__(self, image_size=32, latent_dim=100, batch_size=32, learning_rate=2e-4, iterations=2000,
                 feature_map_base=64, d_steps_per_iter=1, augment_policy="color,translation,cutout", seed=0,
                 log_every=0):
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.feature_map_base = feature_map_base
        self.d_steps_per_iter = d_steps_per_iter
        self.augment_policy = augment_policy
        self.seed = seed
        self.log_every = log_every

    @property
    def config(self) -> GanConfig:
        return GanConfig(self.image_size, self.latent_dim, self.batch_size, self.learning_rate, self.iterations,
                         self.feature_map_base, self.d_steps_per_iter, self.augment_policy, self.seed)

    @classmethod
    def from_config(cls, config: GanConfig, **extra):
        return cls(**asdict(config), **extra)

    def _build(self, cfg: GanConfig):
        torch.manual_seed(cfg.seed)
        self.generator_ = Generator(cfg.latent_dim, cfg.image_size, cfg.feature_map_base, self.conditional)
        self.discriminator_ = Discriminator(cfg.image_size, cfg.feature_map_base, self.conditional)
        betas = (0.5, 0.999)
        opt_g = torch.optim.Adam(self.generator_.parameters(), lr=cfg.learning_rate, betas=betas)
        opt_d = torch.optim.Adam(self.discriminator_.parameters(), lr=cfg.learning_rate, betas=betas)
        return opt_g, opt_d

    def _augment(self, x, gen):
        return diff_augment(x, self.augment_policy, generator=gen)

    def _log(self, it, loss_d, loss_g, t0):
        self.history_.append((it, float(loss_d), float(loss_g)))
        if self.log_every and (it + 1) % self.log_every == 0:
            log.info("iter %d/%d  loss_d=%.4f  loss_g=%.4f  (%.1fs)", it + 1, self.iterations,
                     loss_d, loss_g, time.time() - t0)

    def _noise(self, n, gen):
        return torch.randn(n, self.latent_dim, generator=gen)

    def _check_label(self, label):
        raise NotImplementedError

    def sample_tensor(self, n: int, label=None, seed=0) -> torch.Tensor:
        """Raw generator output, NCHW in ``[-1, 1]``."""
        check_is_fitted(self, "generator_")
        labels = self._check_label(label)
        if n == 0:
            return torch.empty(0, 3, self.image_size, self.image_size)
        gen = torch.Generator().manual_seed(int(seed))
        z = self._noise(n, gen)
        self.generator_.eval()
        with torch.no_grad():
            if self.conditional:
                return self.generator_(z, torch.full((n,), labels, dtype=torch.float32))
            return self.generator_(z)

    def sample(self, n: int, label=None, seed=0) -> np.ndarray:
        return tensor_to_images(self.sample_tensor(n, label, seed))

    def save(self, path):
        """Write ``<path>`` (torch weights) and ``<path>.json`` (manifest)."""
        check_is_fitted(self, "generator_")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.generator_.state_dict(), path)
        manifest = {"class": type(self).__name__, "params": self.get_params(),
                    "iterations_run": len(self.history_)}
        manifest.update(self._manifest_extra())
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def _manifest_extra(self):
        return {}

    @staticmethod
    def load(path):
        path = Path(path)
        manifest = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        cls = {"DCGAN": DCGAN, "CcGAN": CcGAN}[manifest["class"]]
        est = cls(**manifest["params"])
        cfg = est.config
        est.generator_ = Generator(cfg.latent_dim, cfg.image_size, cfg.feature_map_base, est.conditional)
        est.generator_.load_state_dict(torch.load(path, weights_only=True))
        est.generator_.eval()
        est.history_ = []
        if est.conditional:
            est.label_range_ = tuple(manifest["label_range"])
            est.vicinal_ = VicinalConfig(**manifest["vicinal"])
        return est


class DCGAN(_BaseGAN):
    """Unconditional baseline generator."""

    def fit(self, X, y=None):
        cfg = self.config
        x_all = images_to_tensor(X, cfg.image_size)
        if x_all.shape[0] < 2:
            raise DataIntegrityError("need at least two training images")
        opt_g, opt_d = self._build(cfg)
        gen = torch.Generator().manual_seed(cfg.seed)
        G, D = self.generator_, self.discriminator_
        G.train()
        D.train()
        self.history_ = []
        t0 = time.time()
        n, m = x_all.shape[0], cfg.batch_size
        for it in range(cfg.iterations):
            for _ in range(cfg.d_steps_per_iter):
                real = x_all[torch.randint(n, (m,), generator=gen)]
                with torch.no_grad():
                    fake = G(self._noise(m, gen))
                loss_d = gan_discriminator_loss(D(self._augment(real, gen)), D(self._augment(fake, gen)),
                                                from_logits=True)
                opt_d.zero_grad(set_to_none=True)
                loss_d.backward()
                opt_d.step()
            fake = G(self._noise(m, gen))
            loss_g = generator_loss(D(self._augment(fake, gen)), from_logits=True)
            opt_g.zero_grad(set_to_none=True)
            loss_g.backward()
            opt_g.step()
            self._log(it, loss_d.item(), loss_g.item(), t0)
        G.eval()
        return self

    def _check_label(self, label):
        if label is not None:
            raise LabelRangeError("unconditional generator does not accept a label")
        return None


class CcGAN(_BaseGAN):
    """Continuous-conditional GAN trained with a vicinal discriminator loss.

    Each discriminator step draws target labels ``y_j + eps`` around a real
    batch, picks one real image per target from its vicinity (probability
    equal to its vicinity weight) and does the same for a fake batch
    generated at labels resampled from the training labels. The picked
    images are scored at the target label, giving an unbiased estimate of
    the full vicinal loss. ``sigma``/``kappa`` left as ``None`` are set by
    :func:`rule_of_thumb_hyperparams`.
    """

    conditional = True

    def __init__(self, image_size=32, latent_dim=256, batch_size=64, learning_rate=1e-4, iterations=2000,
                 feature_map_base=64, d_steps_per_iter=2, augment_policy="color,translation,cutout", seed=0,
                 log_every=0, vicinal="hard", sigma=None, kappa=None, nu=None, c1=1.0, c2=1.0,
                 mc_samples=1, kappa_factor=KAPPA_FACTOR):
        super().__init__(image_size, latent_dim, batch_size, learning_rate, iterations, feature_map_base,
                         d_steps_per_iter, augment_policy, seed, log_every)
        self.vicinal = vicinal
        self.sigma = sigma
        self.kappa = kappa
        self.nu = nu
        self.c1 = c1
        self.c2 = c2
        self.mc_samples = mc_samples
        self.kappa_factor = kappa_factor

    def _vicinal_config(self, labels) -> VicinalConfig:
        sigma, kappa = self.sigma, self.kappa
        if sigma is None or kappa is None:
            auto_sigma, auto_kappa = rule_of_thumb_hyperparams(labels, len(labels), self.kappa_factor)
            sigma = auto_sigma if sigma is None else sigma
            kappa = auto_kappa if kappa is None else kappa
        return VicinalConfig(sigma=float(sigma), kappa=float(kappa), kind=self.vicinal, c1=self.c1, c2=self.c2,
                             nu=self.nu, mc_samples=self.mc_samples)

    def _targets(self, labels, vcfg, gen):
        """Perturbed targets around ``labels`` and one vicinity pick per target."""
        eps = vcfg.sigma * torch.randn(labels.shape, generator=gen, dtype=labels.dtype)
        targets = labels + eps
        picks = sample_vicinity_indices(targets, labels, vcfg, generator=gen)
        for _ in range(_MAX_EPS_REDRAWS):
            empty = picks < 0
            if not bool(empty.any()):
                break
            redraw = labels[empty] + vcfg.sigma * torch.randn(int(empty.sum()), generator=gen, dtype=labels.dtype)
            targets[empty] = redraw
            picks = sample_vicinity_indices(targets, labels, vcfg, generator=gen)
        empty = picks < 0
        targets[empty] = labels[empty]
        picks[empty] = torch.nonzero(empty).squeeze(-1)
        return targets, picks

    def fit(self, X, y):
        cfg = self.config
        x_all = images_to_tensor(X, cfg.image_size)
        y_np = np.asarray(y, dtype=float)
        y_all = torch.as_tensor(y_np, dtype=torch.float32)
        if x_all.shape[0] < 2:
            raise DataIntegrityError("need at least two training images")
        if y_all.shape != (x_all.shape[0],):
            raise DataIntegrityError(f"{x_all.shape[0]} images but {tuple(y_all.shape)} labels")
        if bool((y_all <= 0).any()) or bool((y_all > 1).any()):
            raise LabelRangeError("training labels must lie in (0, 1]")
        vcfg = self._vicinal_config(y_np)
        self.vicinal_ = vcfg
        self.label_range_ = (float(y_np.min()), float(y_np.max()))
        opt_g, opt_d = self._build(cfg)
        gen = torch.Generator().manual_seed(cfg.seed)
        G, D = self.generator_, self.discriminator_
        G.train()
        D.train()
        self.history_ = []
        t0 = time.time()
        n, m = x_all.shape[0], cfg.batch_size
        for it in range(cfg.iterations):
            for _ in range(cfg.d_steps_per_iter):
                idx = torch.randint(n, (m,), generator=gen)
                real_labels = y_all[idx]
                t_real, pick_real = self._targets(real_labels, vcfg, gen)
                real = x_all[idx][pick_real]
                fake_labels = y_all[torch.randint(n, (m,), generator=gen)]
                t_fake, pick_fake = self._targets(fake_labels, vcfg, gen)
                with torch.no_grad():
                    fake = G(self._noise(m, gen), fake_labels)[pick_fake]
                d_real = D(self._augment(real, gen), t_real)
                d_fake = D(self._augment(fake, gen), t_fake)
                loss_d = (-vcfg.c1 * torch.nn.functional.logsigmoid(d_real).mean()
                          - vcfg.c2 * torch.nn.functional.logsigmoid(-d_fake).mean())
                opt_d.zero_grad(set_to_none=True)
                loss_d.backward()
                opt_d.step()
            g_labels = y_all[torch.randint(n, (m,), generator=gen)]
            g_labels = g_labels + vcfg.sigma * torch.randn(m, generator=gen)
            fake = G(self._noise(m, gen), g_labels)
            loss_g = generator_loss(D(self._augment(fake, gen), g_labels), from_logits=True)
            opt_g.zero_grad(set_to_none=True)
            loss_g.backward()
            opt_g.step()
            self._log(it, loss_d.item(), loss_g.item(), t0)
        G.eval()
        return self

    def _check_label(self, label):
        if label is None:
            raise LabelRangeError("conditional generator needs a label")
        lo, hi = self.label_range_
        label = float(label)
        if not lo - LABEL_TOL <= label <= hi + LABEL_TOL:
            raise LabelRangeError(f"label {label} outside the trained range [{lo}, {hi}]")
        return label

    def _manifest_extra(self):
        return {"label_range": list(self.label_range_), "vicinal": asdict(self.vicinal_)}


def sample(generator: _BaseGAN, n: int, label=None, seed=0) -> np.ndarray:
    return generator.sample(n, label, seed)
