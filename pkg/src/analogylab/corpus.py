"""Procedural glyph corpus on a category x property grid, splits and file I/O.

Each category is a glyph (regular polygon, star, ring or multi-bar cross,
with a variant index that changes sides/points/hole/bars). Every glyph
carries a dark orientation marker so rotations are visible even for
symmetric shapes. Properties are shared by all categories: the first
``num_hue_properties`` ids recolour the glyph, the rest rotate it.
"""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from . import _binio
from .errors import FormatError, ValidationError
from .quadruples import AnalogyType

CORPUS_MAGIC = b"VSLC"
CORPUS_VERSION = 1

_SUPERSAMPLE = 3
_GLYPH_RADIUS = 0.36  # fraction of image size
_ROTATION_COLOR = (0.35, 0.35, 0.35)


@dataclass(frozen=True)
class CorpusSpec:
    num_categories: int = 12
    num_properties: int = 8
    exemplars_per_cell: int = 6
    image_size: int = 24
    channels: int = 3
    # None -> half of the properties (rounded up) are hues
    num_hue_properties: Optional[int] = None
    jitter_px: float = 2.0
    jitter_scale: float = 0.1
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_categories < 2:
            raise ValidationError(f"num_categories must be >= 2, got {self.num_categories}")
        if self.num_properties < 2:
            raise ValidationError(f"num_properties must be >= 2, got {self.num_properties}")
        if self.exemplars_per_cell < 1:
            raise ValidationError(
                f"exemplars_per_cell must be >= 1, got {self.exemplars_per_cell}"
            )
        if self.channels != 3:
            raise ValidationError("only 3-channel images are rendered")
        if self.image_size < 4:
            raise ValidationError(f"image_size too small: {self.image_size}")
        if not 0 <= self.hue_count <= self.num_properties:
            raise ValidationError("num_hue_properties out of range")
        if self.jitter_px < 0 or not 0 <= self.jitter_scale < 1 or not 0 <= self.noise <= 1:
            raise ValidationError("jitter settings out of range")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")

    @property
    def hue_count(self) -> int:
        if self.num_hue_properties is None:
            return (self.num_properties + 1) // 2
        return self.num_hue_properties

    @property
    def num_images(self) -> int:
        return self.num_categories * self.num_properties * self.exemplars_per_cell


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (3, H, W) in [0, 1]
    category_id: int
    property_id: int
    exemplar_id: int
    render_seed: int


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _glyph_mask(category_id: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inside test in the glyph's unit frame (circumradius 1)."""
    family, variant = category_id % 4, category_id // 4
    r = np.hypot(u, v)
    theta = np.arctan2(v, u)
    if family == 0:
        n = 3 + variant
        sector = np.mod(theta, 2 * np.pi / n) - np.pi / n
        return r * np.cos(sector) <= np.cos(np.pi / n)
    if family == 1:
        n = 4 + variant
        return r <= 0.6 + 0.4 * np.cos(n * theta)
    if family == 2:
        inner = min(0.25 * variant, 0.75)
        return (r <= 1.0) & (r >= inner)
    bars = 2 + variant
    inside = np.zeros(u.shape, dtype=bool)
    for k in range(bars):
        a = np.pi * k / bars
        inside |= np.abs(-np.sin(a) * u + np.cos(a) * v) <= 0.22
    return inside & (r <= 1.0)


def _property_look(spec: CorpusSpec, property_id: int) -> tuple[tuple[float, float, float], float]:
    hues = spec.hue_count
    if property_id < hues:
        return colorsys.hsv_to_rgb(property_id / hues, 0.85, 0.9), 0.0
    rotations = spec.num_properties - hues
    j = property_id - hues
    return _ROTATION_COLOR, 2 * np.pi * j / rotations


def exemplar_seed_for(spec: CorpusSpec, category_id: int, property_id: int, exemplar_id: int) -> int:
    ss = np.random.SeedSequence([spec.seed, category_id, property_id, exemplar_id])
    return int(ss.generate_state(1, np.uint64)[0])


def render_image(
    spec: CorpusSpec, category_id: int, property_id: int, exemplar_seed: int, exemplar_id: int = 0
) -> LabeledImage:
    """Draw one glyph; ``exemplar_seed`` only controls position, scale and noise.

    Pixels are quantised to multiples of 1/255 so that the u8 file format
    round-trips exactly.
    """
    if not 0 <= category_id < spec.num_categories:
        raise ValidationError(f"category_id {category_id} out of range")
    if not 0 <= property_id < spec.num_properties:
        raise ValidationError(f"property_id {property_id} out of range")
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, category_id, property_id, int(exemplar_seed)])
    )
    dx, dy = rng.uniform(-spec.jitter_px, spec.jitter_px, size=2)
    scale = 1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale)
    size = spec.image_size
    noise = rng.uniform(-spec.noise, spec.noise, size=(3, size, size))

    color, angle = _property_look(spec, property_id)
    s = _SUPERSAMPLE
    t = (np.arange(size * s) + 0.5) / s - size / 2.0
    py, px = np.meshgrid(t - dy, t - dx, indexing="ij")
    radius = _GLYPH_RADIUS * size * scale
    # rotate sample points into the glyph frame; y axis points down in images
    ca, sa = np.cos(angle), np.sin(angle)
    u = (ca * px - sa * py) / radius
    v = (sa * px + ca * py) / radius
    body = _glyph_mask(category_id, u, v)
    marker = np.hypot(u - 0.55, v) <= 0.2
    cover = body.reshape(size, s, size, s).mean(axis=(1, 3))
    mcover = marker.reshape(size, s, size, s).mean(axis=(1, 3))

    col = np.asarray(color)[:, None, None]
    img = (1.0 + noise) * (1.0 - cover) + col * cover
    img = img * (1.0 - mcover) + 0.25 * col * mcover
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return LabeledImage(img, category_id, property_id, exemplar_id, int(exemplar_seed))


# ---------------------------------------------------------------------------
# corpus container
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Corpus:
    """All images of the grid, flattened in ``(c, p, e)`` lexicographic order."""

    spec: CorpusSpec
    pixels: np.ndarray  # (N, 3, H, W)
    render_seeds: np.ndarray  # (N,) uint64

    def __post_init__(self):
        s = self.spec
        grid = np.indices((s.num_categories, s.num_properties, s.exemplars_per_cell))
        self.category = grid[0].reshape(-1)
        self.property = grid[1].reshape(-1)
        self.exemplar = grid[2].reshape(-1)
        self.pixels.flags.writeable = False

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def index(self, category_id: int, property_id: int, exemplar_id: int) -> int:
        s = self.spec
        return (category_id * s.num_properties + property_id) * s.exemplars_per_cell + exemplar_id

    def cell(self, category_id: int, property_id: int) -> np.ndarray:
        start = self.index(category_id, property_id, 0)
        return np.arange(start, start + self.spec.exemplars_per_cell)

    def image(self, i: int) -> LabeledImage:
        return LabeledImage(
            self.pixels[i],
            int(self.category[i]),
            int(self.property[i]),
            int(self.exemplar[i]),
            int(self.render_seeds[i]),
        )

    def same_content(self, other: "Corpus") -> bool:
        """Field-for-field equality of everything the file format stores."""
        a, b = self.spec, other.spec
        keys = ("num_categories", "num_properties", "exemplars_per_cell", "image_size", "channels", "seed")
        return (
            all(getattr(a, k) == getattr(b, k) for k in keys)
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.render_seeds, other.render_seeds)
        )


def generate_corpus(spec: CorpusSpec) -> Corpus:
    n, size = spec.num_images, spec.image_size
    pixels = np.empty((n, 3, size, size))
    seeds = np.empty(n, dtype=np.uint64)
    i = 0
    for c in range(spec.num_categories):
        for p in range(spec.num_properties):
            for e in range(spec.exemplars_per_cell):
                es = exemplar_seed_for(spec, c, p, e)
                pixels[i] = render_image(spec, c, p, es, e).pixels
                seeds[i] = es
                i += 1
    return Corpus(spec, pixels, seeds)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    unseen_category_ids: frozenset = frozenset()
    heldout_analogy_types: frozenset = frozenset()
    # last ``test_exemplars`` exemplars of every training-category cell are
    # kept out of training and used for evaluation
    test_exemplars: int = 0
    seed: int = 0


@dataclass
class Splits:
    corpus: Corpus
    train: np.ndarray
    test: np.ndarray
    unseen: np.ndarray
    heldout_types: frozenset
    seen_categories: tuple
    unseen_categories: tuple

    @property
    def seen_eval(self) -> np.ndarray:
        """Evaluation pool for training categories (train pool if nothing is held out)."""
        return self.test if self.test.size else self.train

    @cached_property
    def channel_means(self) -> np.ndarray:
        return channel_means(self.corpus, self.train)


def make_splits(corpus: Corpus, split: SplitSpec) -> Splits:
    s = corpus.spec
    unseen = frozenset(int(c) for c in split.unseen_category_ids)
    if any(not 0 <= c < s.num_categories for c in unseen):
        raise ValidationError("unseen category id out of range")
    seen = tuple(c for c in range(s.num_categories) if c not in unseen)
    if len(seen) < 2:
        raise ValidationError("need at least two training categories")
    for t in split.heldout_analogy_types:
        ids = (t.c_i, t.c_o, t.p_1, t.p_2)
        if not (0 <= t.c_i < s.num_categories and 0 <= t.c_o < s.num_categories):
            raise ValidationError(f"held-out type {ids} has an invalid category id")
        if not (0 <= t.p_1 < s.num_properties and 0 <= t.p_2 < s.num_properties):
            raise ValidationError(f"held-out type {ids} has an invalid property id")
    if not 0 <= split.test_exemplars < s.exemplars_per_cell:
        raise ValidationError("test_exemplars must leave at least one training exemplar")

    is_unseen = np.isin(corpus.category, list(unseen))
    is_test = corpus.exemplar >= s.exemplars_per_cell - split.test_exemplars
    return Splits(
        corpus=corpus,
        train=np.flatnonzero(~is_unseen & ~is_test),
        test=np.flatnonzero(~is_unseen & is_test),
        unseen=np.flatnonzero(is_unseen),
        heldout_types=frozenset(split.heldout_analogy_types),
        seen_categories=seen,
        unseen_categories=tuple(sorted(unseen)),
    )


def random_split_spec(
    spec: CorpusSpec,
    n_unseen_categories: int = 2,
    n_heldout_types: int = 6,
    test_exemplars: int = 0,
    seed: int = 0,
) -> SplitSpec:
    """Pick unseen categories, then held-out types among the remaining categories."""
    rng = np.random.default_rng(seed)
    unseen = rng.choice(spec.num_categories, size=n_unseen_categories, replace=False)
    seen = [c for c in range(spec.num_categories) if c not in set(unseen.tolist())]
    types: set = set()
    total = len(seen) * (len(seen) - 1) * spec.num_properties * (spec.num_properties - 1)
    if n_heldout_types >= total:
        raise ValidationError("cannot hold out every analogy type")
    while len(types) < n_heldout_types:
        ci, co = rng.choice(seen, size=2, replace=False)
        p1, p2 = rng.choice(spec.num_properties, size=2, replace=False)
        types.add(AnalogyType(int(ci), int(co), int(p1), int(p2)))
    return SplitSpec(
        unseen_category_ids=frozenset(int(c) for c in unseen),
        heldout_analogy_types=frozenset(types),
        test_exemplars=test_exemplars,
        seed=seed,
    )


def channel_means(corpus: Corpus, indices: Iterable[int]) -> np.ndarray:
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices)
    return corpus.pixels[idx].mean(axis=(0, 2, 3))


def preprocess(pixels: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Subtract per-channel means (works on one image or a batch)."""
    return pixels - np.asarray(means).reshape(-1, 1, 1)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    s = corpus.spec
    parts = [
        CORPUS_MAGIC,
        _binio.u32(CORPUS_VERSION),
        *(
            _binio.u32(v)
            for v in (
                s.num_categories,
                s.num_properties,
                s.exemplars_per_cell,
                s.image_size,
                s.image_size,
                s.channels,
            )
        ),
        _binio.u64(s.seed),
    ]
    raw = np.round(corpus.pixels * 255.0).astype(np.uint8)
    for i in range(len(corpus)):
        parts.append(raw[i].tobytes())
        parts.append(_binio.u64(int(corpus.render_seeds[i])))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_corpus(path: str | os.PathLike) -> Corpus:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"corpus file {os.fspath(path)}")
    r.header(CORPUS_MAGIC, CORPUS_VERSION)
    nc, np_, ne, h, w, ch = (r.u32() for _ in range(6))
    seed = r.u64()
    if h != w:
        raise FormatError(f"non-square images ({h}x{w}) are not supported")
    try:
        spec = CorpusSpec(nc, np_, ne, image_size=h, channels=ch, seed=seed)
    except ValidationError as exc:
        raise FormatError(f"corpus header is invalid: {exc}") from exc
    n = spec.num_images
    pixels = np.empty((n, ch, h, w))
    seeds = np.empty(n, dtype=np.uint64)
    for i in range(n):
        pixels[i] = r.array("u1", ch * h * w).reshape(ch, h, w) / 255.0
        seeds[i] = r.u64()
    if not r.done():
        raise FormatError(f"{r.what}: {len(r.data) - r.pos} trailing bytes")
    return Corpus(spec, pixels, seeds)
