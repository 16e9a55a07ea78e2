"""Analogy quadruples: validity, counting and the training samplers.

A quadruple ``[I1 : I2 :: I3 : I4]`` is a valid analogy when I1, I2 share a
category ``c_i``, I3, I4 share a different category ``c_o``, I1, I3 share
property ``p_1`` and I2, I4 share a different property ``p_2``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ExhaustionError, ValidationError

_MAX_REJECTIONS = 1000


class AnalogyType(NamedTuple):
    c_i: int
    c_o: int
    p_1: int
    p_2: int


@dataclass(frozen=True)
class Quadruple:
    i1: int
    i2: int
    i3: int
    i4: int
    y: int

    @property
    def images(self) -> tuple[int, int, int, int]:
        return (self.i1, self.i2, self.i3, self.i4)


def is_valid_analogy(labels: Sequence[tuple[int, int]]) -> bool:
    """``labels`` holds the ``(category, property)`` of I1..I4."""
    (c1, p1), (c2, p2), (c3, p3), (c4, p4) = labels
    return c1 == c2 and c3 == c4 and c1 != c3 and p1 == p3 and p2 == p4 and p1 != p2


def valid_analogy_mask(categories: np.ndarray, properties: np.ndarray) -> np.ndarray:
    """Vectorised :func:`is_valid_analogy` over a trailing axis of length 4."""
    c = np.asarray(categories)
    p = np.asarray(properties)
    return (
        (c[..., 0] == c[..., 1])
        & (c[..., 2] == c[..., 3])
        & (c[..., 0] != c[..., 2])
        & (p[..., 0] == p[..., 2])
        & (p[..., 1] == p[..., 3])
        & (p[..., 0] != p[..., 1])
    )


def count_positive_analogies(num_categories: int, num_properties: int) -> int:
    """Number of analogy types, i.e. positives with one image per cell."""
    if num_categories < 2 or num_properties < 2:
        raise ValidationError("need at least two categories and two properties")
    return math.comb(num_categories, 2) * math.comb(num_properties, 2) * 4


def iter_analogy_types(categories: Iterable[int], properties: Iterable[int]) -> Iterator[AnalogyType]:
    cats, props = list(categories), list(properties)
    for ci in cats:
        for co in cats:
            if co == ci:
                continue
            for p1 in props:
                for p2 in props:
                    if p2 != p1:
                        yield AnalogyType(ci, co, p1, p2)


class Pool:
    """Immutable view of a set of corpus images grouped by ``(c, p)`` cell."""

    def __init__(self, indices: np.ndarray, category: np.ndarray, property: np.ndarray):
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indices.size == 0:
            raise ValidationError("empty image pool")
        self.category = np.asarray(category)[self.indices]
        self.property = np.asarray(property)[self.indices]
        self._all_category = np.asarray(category)
        self._all_property = np.asarray(property)
        self.categories = tuple(int(c) for c in np.unique(self.category))
        self.properties = tuple(int(p) for p in np.unique(self.property))
        cells: dict[tuple[int, int], list[int]] = {}
        for i, c, p in zip(self.indices.tolist(), self.category.tolist(), self.property.tolist()):
            cells.setdefault((c, p), []).append(i)
        self.cells = {k: np.asarray(v, dtype=np.int64) for k, v in cells.items()}
        self.complete = len(self.cells) == len(self.categories) * len(self.properties)

    @classmethod
    def from_corpus(cls, corpus, indices: np.ndarray) -> "Pool":
        return cls(indices, corpus.category, corpus.property)

    def __len__(self) -> int:
        return self.indices.size

    def labels(self, image: int) -> tuple[int, int]:
        return int(self._all_category[image]), int(self._all_property[image])

    def quad_labels(self, q: Quadruple) -> list[tuple[int, int]]:
        return [self.labels(i) for i in q.images]

    def pick(self, rng: np.random.Generator, c: int, p: int) -> int:
        cell = self.cells[(c, p)]
        return int(cell[rng.integers(cell.size)])

    def n_types(self) -> int:
        nc, np_ = len(self.categories), len(self.properties)
        return nc * (nc - 1) * np_ * (np_ - 1)

    def n_admissible(self, registry: Iterable[AnalogyType]) -> int:
        cats, props = set(self.categories), set(self.properties)
        banned = sum(
            1
            for t in set(registry)
            if t.c_i in cats and t.c_o in cats and t.c_i != t.c_o
            and t.p_1 in props and t.p_2 in props and t.p_1 != t.p_2
        )
        return self.n_types() - banned


def _two_distinct(rng: np.random.Generator, values: tuple) -> tuple[int, int]:
    n = len(values)
    a = int(rng.integers(n))
    b = int(rng.integers(n - 1))
    if b >= a:
        b += 1
    return values[a], values[b]


def sample_analogy_type(
    rng: np.random.Generator, pool: Pool, registry: frozenset | set = frozenset()
) -> AnalogyType:
    """Uniform over the pool's analogy types that are not in ``registry``."""
    if len(pool.categories) < 2 or len(pool.properties) < 2:
        raise ExhaustionError("pool needs two categories and two properties")
    if registry and pool.n_admissible(registry) <= 0:
        raise ExhaustionError("every analogy type of the pool is held out")
    while True:
        ci, co = _two_distinct(rng, pool.categories)
        p1, p2 = _two_distinct(rng, pool.properties)
        t = AnalogyType(ci, co, p1, p2)
        if t not in registry:
            return t


def sample_positive(
    rng: np.random.Generator, pool: Pool, registry: frozenset | set = frozenset()
) -> Quadruple:
    if not pool.complete:
        raise ValidationError("positive sampling needs every (c, p) cell of the pool filled")
    t = sample_analogy_type(rng, pool, registry)
    return Quadruple(
        pool.pick(rng, t.c_i, t.p_1),
        pool.pick(rng, t.c_i, t.p_2),
        pool.pick(rng, t.c_o, t.p_1),
        pool.pick(rng, t.c_o, t.p_2),
        1,
    )


def sample_negative_random(rng: np.random.Generator, pool: Pool) -> Quadruple:
    """Four images drawn independently and uniformly, rejected while valid."""
    for _ in range(_MAX_REJECTIONS):
        q = pool.indices[rng.integers(len(pool), size=4)].tolist()
        quad = Quadruple(*q, 0)
        if not is_valid_analogy(pool.quad_labels(quad)):
            return quad
    raise RuntimeError(f"random negative sampler rejected {_MAX_REJECTIONS} draws in a row")


def sample_negative_hard(
    rng: np.random.Generator, pool: Pool, registry: frozenset | set = frozenset()
) -> Quadruple:
    """Break a positive by swapping the property or category of I3 or I4.

    Property swaps draw ``p* not in {p_1, p_2}`` and category swaps draw
    ``c* not in {c_i, c_o}``, so at least three categories or three
    properties are required.
    """
    can_swap_prop = len(pool.properties) >= 3
    can_swap_cat = len(pool.categories) >= 3
    if not (can_swap_prop or can_swap_cat):
        raise ExhaustionError("hard negatives need >= 3 properties or >= 3 categories")
    pos = sample_positive(rng, pool, registry)
    ci, p1 = pool.labels(pos.i1)
    co, p2 = pool.labels(pos.i4)
    slot = 3 + int(rng.integers(2))
    swap_prop = bool(rng.integers(2))
    if swap_prop and not can_swap_prop:
        swap_prop = False
    elif not swap_prop and not can_swap_cat:
        swap_prop = True
    slot_prop = p1 if slot == 3 else p2
    if swap_prop:
        choices = [p for p in pool.properties if p not in (p1, p2)]
        new = pool.pick(rng, co, choices[int(rng.integers(len(choices)))])
    else:
        choices = [c for c in pool.categories if c not in (ci, co)]
        new = pool.pick(rng, choices[int(rng.integers(len(choices)))], slot_prop)
    if slot == 3:
        return Quadruple(pos.i1, pos.i2, new, pos.i4, 0)
    return Quadruple(pos.i1, pos.i2, pos.i3, new, 0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_batch(
    rng: np.random.Generator,
    pool: Pool,
    size: int,
    pos_fraction: float = 0.5,
    hard_fraction: float = 0.5,
    registry: frozenset | set = frozenset(),
) -> list[Quadruple]:
    if size < 1:
        raise ValidationError("batch size must be >= 1")
    if not (0.0 <= pos_fraction <= 1.0 and 0.0 <= hard_fraction <= 1.0):
        raise ValidationError("fractions must lie in [0, 1]")
    n_pos = _round_half_up(size * pos_fraction)
    n_neg = size - n_pos
    n_hard = _round_half_up(n_neg * hard_fraction)
    batch = [sample_positive(rng, pool, registry) for _ in range(n_pos)]
    batch += [sample_negative_hard(rng, pool, registry) for _ in range(n_hard)]
    batch += [sample_negative_random(rng, pool) for _ in range(n_neg - n_hard)]
    return [batch[i] for i in rng.permutation(size)]


def batch_arrays(batch: Sequence[Quadruple]) -> tuple[np.ndarray, np.ndarray]:
    """``(B, 4)`` image indices and ``(B,)`` float labels."""
    idx = np.array([q.images for q in batch], dtype=np.int64).reshape(-1, 4)
    y = np.array([q.y for q in batch], dtype=np.float64)
    return idx, y


def write_batch_csv(batch: Sequence[Quadruple], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i1", "i2", "i3", "i4", "y"])
        for q in batch:
            w.writerow([q.i1, q.i2, q.i3, q.i4, q.y])


def read_batch_csv(path: str | os.PathLike) -> list[Quadruple]:
    with open(path, newline="") as fh:
        return [
            Quadruple(int(r["i1"]), int(r["i2"]), int(r["i3"]), int(r["i4"]), int(r["y"]))
            for r in csv.DictReader(fh)
        ]
