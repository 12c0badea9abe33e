"""Synthetic consumers, templates and a closed-form choice oracle.

Consumers carry latent taste vectors ``u_i`` and templates latent style
vectors ``s_j``. The probability that consumer ``i`` picks template ``j`` is

    p_ij = logistic(alpha + beta * <u_i, s_j> - gamma * rank_j)

Style vectors are rendered into images so that a generated image can be
decoded back into a style and scored by the same oracle:

* ``s[0]`` sets the overall brightness,
* ``s[1]`` tilts the colour between red and blue,
* ``s[2]`` (if present) sets the frequency of faint horizontal stripes,
* ``s[3]`` (if present) sets the stripe phase.

Faces are smooth grayscale patterns whose shape is driven by ``u_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from sklearn.cluster import KMeans

from .data import DesignTemplate, Source
from .exceptions import DataIntegrityError
from .ingest import ExternalPhoto, RawOrderEvent, ThemePage, build_choice_records

BRIGHTNESS_LO, BRIGHTNESS_SPAN = 0.15, 0.7
TINT_AMPLITUDE = 0.1
STRIPE_AMPLITUDE = 0.04
FACE_GAIN = 2.5
_FACE_BASIS_SEED = 20_240_531


@dataclass(frozen=True)
class WorldParams:
    alpha: float = -3.0
    beta: float = 2.0
    gamma: float = 0.1


@dataclass(eq=False)
class SyntheticWorld:
    latent_dim: int
    consumer_ids: list[str]
    taste: np.ndarray
    template_ids: list[str]
    theme_ids: list[str]
    styles: np.ndarray
    ranks: np.ndarray
    is_cover: np.ndarray
    params: WorldParams = field(default_factory=WorldParams)
    seed: int | None = None
    image_size: int = 32

    def __post_init__(self):
        self._consumer_index = {c: i for i, c in enumerate(self.consumer_ids)}
        self._template_index = {t: j for j, t in enumerate(self.template_ids)}

    def consumer_index(self, consumer_id) -> int:
        try:
            return self._consumer_index[consumer_id]
        except KeyError:
            raise KeyError(f"unknown consumer id {consumer_id!r}") from None

    def template_index(self, template_id) -> int:
        try:
            return self._template_index[template_id]
        except KeyError:
            raise KeyError(f"unknown template id {template_id!r}") from None

    def prob_table(self) -> np.ndarray:
        """Oracle choice probabilities for every (consumer, template) pair."""
        p = self.params
        return expit(p.alpha + p.beta * self.taste @ self.styles.T - p.gamma * self.ranks[None, :])

    def popularity(self) -> np.ndarray:
        """Oracle aggregate popularity of each catalog template."""
        return self.prob_table().mean(axis=0)

    def templates(self) -> list[DesignTemplate]:
        return [DesignTemplate(tid, theme, render_design(s, self.image_size), display_rank=int(r),
                               is_cover=bool(c), source=Source.INTERNAL)
                for tid, theme, s, r, c in zip(self.template_ids, self.theme_ids, self.styles,
                                               self.ranks, self.is_cover)]

    def theme_pages(self) -> list[ThemePage]:
        pages = []
        for theme in sorted(set(self.theme_ids)):
            idx = [j for j, t in enumerate(self.theme_ids) if t == theme]
            idx.sort(key=lambda j: self.ranks[j])
            cover = next(self.template_ids[j] for j in idx if self.is_cover[j])
            pages.append(ThemePage(theme, cover, tuple(self.template_ids[j] for j in idx)))
        return pages

    def face_photos(self, n_photos: int = 2, size: int = 16, noise: float = 0.02, seed=None):
        """``{consumer_id: [image, ...]}`` with independent pixel noise per photo."""
        rng = np.random.default_rng(seed)
        return {cid: [render_face(self.taste[i], size, noise, rng) for _ in range(n_photos)]
                for i, cid in enumerate(self.consumer_ids)}


def generate_world(latent_dim: int, n_consumers: int, n_templates: int, params: WorldParams | None = None,
                   seed=None, n_themes: int | None = None, image_size: int = 32) -> SyntheticWorld:
    if latent_dim < 2:
        raise ValueError("latent_dim must be at least 2")
    if n_consumers < 1 or n_templates < 1:
        raise ValueError("n_consumers and n_templates must be positive")
    params = params or WorldParams()
    rng = np.random.default_rng(seed)
    taste = rng.standard_normal((n_consumers, latent_dim))
    styles = rng.standard_normal((n_templates, latent_dim))
    if n_themes is None:
        n_themes = max(1, int(round(n_templates / 7)))
    n_themes = min(n_themes, n_templates)
    if n_themes == 1:
        clusters = np.zeros(n_templates, dtype=int)
    else:
        km = KMeans(n_clusters=n_themes, n_init=4, random_state=int(rng.integers(2**31 - 1)))
        clusters = km.fit_predict(styles)
    ranks = np.zeros(n_templates, dtype=int)
    is_cover = np.zeros(n_templates, dtype=bool)
    for k in range(n_themes):
        members = np.flatnonzero(clusters == k)
        if members.size == 0:
            continue
        order = rng.permutation(members)
        ranks[order] = np.arange(1, members.size + 1)
        is_cover[order[0]] = True
    # Empty k-means clusters leave gaps in theme numbering; relabel densely.
    _, dense = np.unique(clusters, return_inverse=True)
    return SyntheticWorld(
        latent_dim=latent_dim,
        consumer_ids=[f"c{i:05d}" for i in range(n_consumers)],
        taste=taste,
        template_ids=[f"t{j:04d}" for j in range(n_templates)],
        theme_ids=[f"theme{k:03d}" for k in dense],
        styles=styles,
        ranks=ranks,
        is_cover=is_cover,
        params=params,
        seed=seed,
        image_size=image_size,
    )


def oracle_choice_prob(world: SyntheticWorld, consumer_id: str, template_id: str) -> float:
    i = world.consumer_index(consumer_id)
    j = world.template_index(template_id)
    p = world.params
    score = sum(float(a) * float(b) for a, b in zip(world.taste[i], world.styles[j]))
    z = p.alpha + p.beta * score - p.gamma * float(world.ranks[j])
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def oracle_popularity(world: SyntheticWorld, styles: np.ndarray, ranks) -> np.ndarray:
    """Mean oracle choice probability over the world's consumers for arbitrary styles."""
    styles = np.atleast_2d(np.asarray(styles, dtype=float))
    ranks = np.broadcast_to(np.asarray(ranks, dtype=float), (styles.shape[0],))
    p = world.params
    return expit(p.alpha + p.beta * world.taste @ styles.T - p.gamma * ranks[None, :]).mean(axis=0)


def sample_order_events(world: SyntheticWorld, seed=None) -> list[RawOrderEvent]:
    """One order event per consumer with choices drawn from the oracle.

    A theme counts as chosen when at least one of its templates is drawn
    positive; every consumer browses every theme page.
    """
    rng = np.random.default_rng(seed)
    draws = rng.random((len(world.consumer_ids), len(world.template_ids))) < world.prob_table()
    pages = tuple(world.theme_pages())
    theme_of = np.array(world.theme_ids)
    tids = np.array(world.template_ids)
    events = []
    for i, cid in enumerate(world.consumer_ids):
        chosen = draws[i]
        events.append(RawOrderEvent(cid, frozenset(theme_of[chosen].tolist()),
                                    frozenset(tids[chosen].tolist()), pages))
    return events


def sample_choices(world: SyntheticWorld, seed=None) -> list:
    """Oracle draws turned into choice records through the theme-page rule."""
    return build_choice_records(sample_order_events(world, seed))


def save_world(path, world: SyntheticWorld):
    """Store the latent truth of a world in one ``.npz`` file."""
    np.savez(path, taste=world.taste, styles=world.styles, ranks=world.ranks, is_cover=world.is_cover,
             consumer_ids=np.array(world.consumer_ids), template_ids=np.array(world.template_ids),
             theme_ids=np.array(world.theme_ids),
             params=np.array([world.params.alpha, world.params.beta, world.params.gamma]),
             meta=np.array([-1 if world.seed is None else world.seed, world.image_size]))


def load_world(path) -> SyntheticWorld:
    with np.load(path) as z:
        seed, image_size = (int(v) for v in z["meta"])
        return SyntheticWorld(
            latent_dim=int(z["taste"].shape[1]), consumer_ids=z["consumer_ids"].tolist(), taste=z["taste"],
            template_ids=z["template_ids"].tolist(), theme_ids=z["theme_ids"].tolist(), styles=z["styles"],
            ranks=z["ranks"], is_cover=z["is_cover"], params=WorldParams(*(float(v) for v in z["params"])),
            seed=None if seed < 0 else seed, image_size=image_size)


# ---------------------------------------------------------------- rendering

def render_design(style, size: int = 32) -> np.ndarray:
    style = np.asarray(style, dtype=float)
    level = BRIGHTNESS_LO + BRIGHTNESS_SPAN * expit(style[0])
    tint = TINT_AMPLITUDE * np.tanh(style[1])
    img = np.empty((size, size, 3))
    img[..., 0] = level + tint
    img[..., 1] = level
    img[..., 2] = level - tint
    if style.size >= 3:
        freq = 1.0 + 3.0 * expit(style[2])
        phase = np.pi * np.tanh(style[3]) if style.size >= 4 else 0.0
        rows = np.arange(size)[:, None, None]
        img = img + STRIPE_AMPLITUDE * np.sin(2.0 * np.pi * freq * rows / size + phase)
    return np.clip(img, 0.0, 1.0)


def decode_design(images) -> np.ndarray:
    """Recover ``(s[0], s[1])`` from rendered (or generated) images, ``(n, 2)``.

    Accepts a single HxWx3 image or an ``(n, H, W, 3)`` batch.
    """
    images = np.asarray(images, dtype=float)
    if images.ndim == 3:
        images = images[None]
    means = images.mean(axis=(1, 2))
    level = np.clip((means[:, 1] - BRIGHTNESS_LO) / BRIGHTNESS_SPAN, 1e-4, 1 - 1e-4)
    tint = np.clip((means[:, 0] - means[:, 2]) / (2.0 * TINT_AMPLITUDE), -0.9999, 0.9999)
    return np.column_stack([logit(level), np.arctanh(tint)])


def brightness(images) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if images.ndim == 3:
        return np.array([images.mean()])
    return images.reshape(images.shape[0], -1).mean(axis=1)


def _face_basis(latent_dim: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(_FACE_BASIS_SEED + latent_dim)
    freqs = rng.uniform(0.5, 2.0, size=(latent_dim, 2)) * rng.choice([-1, 1], size=(latent_dim, 2))
    phases = rng.uniform(0, 2 * np.pi, size=latent_dim)
    grid = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return np.stack([np.cos(2 * np.pi * (f[0] * yy + f[1] * xx) + ph) for f, ph in zip(freqs, phases)])


def render_face(taste, size: int = 16, noise: float = 0.0, rng=None) -> np.ndarray:
    taste = np.asarray(taste, dtype=float)
    basis = _face_basis(taste.size, size)
    gray = expit(FACE_GAIN * np.tensordot(taste, basis, axes=1) / math.sqrt(taste.size))
    if noise:
        rng = rng if rng is not None else np.random.default_rng()
        gray = gray + noise * rng.standard_normal(gray.shape)
    return np.repeat(np.clip(gray, 0.0, 1.0)[..., None], 3, axis=2)


# ---------------------------------------------------------------- external data

@dataclass(eq=False)
class ExternalCatalog:
    """User photos of external designs plus the truth needed to score them."""

    template_ids: list[str]
    styles: np.ndarray
    photos: list[ExternalPhoto]
    photo_template_ids: list[str]
    photo_taste: np.ndarray


def paste_person(background: np.ndarray, face: np.ndarray, body_value: float = 0.5):
    """Overlay a person (face on top of a flat body) in the lower centre of an image."""
    h, w, _ = background.shape
    fh, fw, _ = face.shape
    body_h = int(math.ceil(fh * (1 - 0.4) / 0.4))
    top = h - fh - body_h
    left = (w - fw) // 2
    if top < 0 or left < 0:
        raise DataIntegrityError("person does not fit inside the photo")
    photo = background.copy()
    mask = np.zeros((h, w), dtype=bool)
    photo[top:top + fh, left:left + fw] = face
    photo[top + fh:h, left:left + fw] = body_value
    mask[top:h, left:left + fw] = True
    return photo, mask


def generate_external(world: SyntheticWorld, n_templates: int, n_photos: int, spread: float = 1.5,
                      face_size: int = 8, seed=None) -> ExternalCatalog:
    """User-generated photos of externally sourced designs.

    External designs are drawn with a wider style spread than the catalog.
    Each photo comes from a fresh consumer who picks one external design with
    probability proportional to the oracle choice probability (rank term
    omitted, since external designs are never ranked).
    """
    rng = np.random.default_rng(seed)
    L = world.latent_dim
    styles = spread * rng.standard_normal((n_templates, L))
    taste = rng.standard_normal((n_photos, L))
    p = world.params
    probs = expit(p.alpha + p.beta * taste @ styles.T)
    probs = probs / probs.sum(axis=1, keepdims=True)
    picks = np.array([rng.choice(n_templates, p=row) for row in probs])
    tids = [f"x{j:04d}" for j in range(n_templates)]
    photos = []
    for k, (j, u) in enumerate(zip(picks, taste)):
        background = render_design(styles[j], world.image_size)
        face = render_face(u, face_size, 0.0)
        image, mask = paste_person(background, face)
        photos.append(ExternalPhoto(f"photo{k:05d}", image, mask))
    return ExternalCatalog(tids, styles, photos, [tids[j] for j in picks], taste)
