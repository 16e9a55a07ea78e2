"""Analogy questions, cosine ranking, recall@k curves and the ablation grid."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import Corpus, CorpusSpec, Splits, generate_corpus, make_splits, preprocess, random_split_spec
from .errors import DegeneratePair, ExhaustionError, ValidationError
from .model import EncoderParams, Hyperparams, encode_in_chunks, train
from .quadruples import AnalogyType, Pool, iter_analogy_types
from .tensor import EPS_NORM

log = logging.getLogger(__name__)

REGIMES = ("seen", "unseen")
UNSEEN_MODES = ("types", "categories")


@dataclass(frozen=True)
class AnalogyQuestion:
    i1: int
    i2: int
    i3: int
    positives: tuple[int, ...]
    distractors: tuple[int, ...]
    analogy_type: AnalogyType
    regime: str

    @property
    def candidates(self) -> tuple[int, ...]:
        return self.positives + self.distractors


@dataclass
class RecallCurve:
    ks: np.ndarray
    recall: np.ndarray
    n_questions: int
    n_distractors: int
    first_positive_rank: np.ndarray  # 1-based, one per question

    def at(self, k: int) -> float:
        hit = np.flatnonzero(self.ks == k)
        if hit.size == 0:
            raise KeyError(k)
        return float(self.recall[hit[0]])


# ---------------------------------------------------------------------------
# features and scoring
# ---------------------------------------------------------------------------


def corpus_features(corpus: Corpus, params: EncoderParams, means: np.ndarray) -> np.ndarray:
    """Encoder output for every corpus image, indexable by image reference."""
    return encode_in_chunks(preprocess(corpus.pixels, means), params)


def score(x12: np.ndarray, x3i: np.ndarray) -> np.ndarray:
    """Cosine between the query pair embedding and candidate pair embedding(s)."""
    x12 = np.asarray(x12, dtype=np.float64)
    x3i = np.asarray(x3i, dtype=np.float64)
    num = x3i @ x12
    den = np.linalg.norm(x3i, axis=-1) * np.linalg.norm(x12)
    return num / den


def _pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = a - b
    return v, np.linalg.norm(v, axis=-1)


def rank_candidates(
    question: AnalogyQuestion, features: np.ndarray, eps: float = EPS_NORM
) -> np.ndarray:
    """Candidates ordered by descending score, ties by ascending image index.

    A degenerate query pair raises :class:`DegeneratePair`. A degenerate
    candidate pair is ranked last with a warning.
    """
    v12, n12 = _pair(features[question.i1], features[question.i2])
    if n12 < eps:
        raise DegeneratePair(f"query images {question.i1} and {question.i2} have identical features")
    cand = np.asarray(question.candidates, dtype=np.int64)
    v3i, n3i = _pair(features[question.i3][None, :], features[cand])
    bad = n3i < eps
    safe = np.where(bad, 1.0, n3i)
    s = (v3i / safe[:, None]) @ (v12 / n12)
    if bad.any():
        log.warning("degenerate candidate pair(s) %s ranked last", cand[bad].tolist())
        s = np.where(bad, -np.inf, s)
    return cand[np.lexsort((cand, -s))]


def random_ranking(question: AnalogyQuestion, rng: np.random.Generator) -> np.ndarray:
    """Chance arm: a uniformly random ordering of the candidates."""
    cand = np.asarray(question.candidates, dtype=np.int64)
    return cand[rng.permutation(cand.size)]


def recall_at_k(ranking: Sequence[int], positives: Iterable[int], k: int) -> int:
    if not 1 <= k <= len(ranking):
        raise ValidationError(f"k={k} outside [1, {len(ranking)}]")
    pos = set(positives)
    return int(any(int(c) in pos for c in ranking[:k]))


def first_positive_rank(ranking: Sequence[int], positives: Iterable[int]) -> int:
    hits = np.flatnonzero(np.isin(np.asarray(ranking), list(positives)))
    return int(hits[0]) + 1 if hits.size else len(ranking) + 1


def chance_recall(k: int, n_distractors: int, n_positives: int = 1) -> float:
    """Exact expected recall@k of a random ranking: ``1 - C(n, k) / C(n + P, k)``."""
    return 1.0 - math.comb(n_distractors, k) / math.comb(n_distractors + n_positives, k)


def chance_recall_approx(k: int, n_distractors: int) -> float:
    """The common ``k / n`` approximation."""
    return k / n_distractors


def evaluate(
    features: Optional[np.ndarray],
    questions: Sequence[AnalogyQuestion],
    ks: Sequence[int],
    rng: Optional[np.random.Generator] = None,
    ranker: Optional[Callable[[AnalogyQuestion], np.ndarray]] = None,
) -> RecallCurve:
    """Mean recall@k over ``questions``.

    Rankings come from ``ranker`` if given, else from cosine ranking of
    ``features``, else (``features is None``) from a random ordering
    driven by ``rng``.
    """
    if not questions:
        raise ValidationError("no questions to evaluate")
    ks = np.asarray(sorted(set(int(k) for k in ks)), dtype=np.int64)
    n_cand = min(len(q.candidates) for q in questions)
    if ks[0] < 1 or ks[-1] > n_cand:
        raise ValidationError(f"ks must lie in [1, {n_cand}]")
    if ranker is None:
        if features is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            ranker = lambda q: random_ranking(q, rng)  # noqa: E731
        else:
            ranker = lambda q: rank_candidates(q, features)  # noqa: E731
    ranks = np.array([first_positive_rank(ranker(q), q.positives) for q in questions])
    hits = ranks[None, :] <= ks[:, None]
    recall = hits.sum(axis=1) / len(questions)
    n_d = len(questions[0].distractors)
    return RecallCurve(ks, recall, len(questions), n_d, ranks)


# ---------------------------------------------------------------------------
# question building
# ---------------------------------------------------------------------------


def _regime_setup(splits: Splits, regime: str, unseen_mode: str) -> tuple[Pool, list[AnalogyType]]:
    corpus = splits.corpus
    props = range(corpus.spec.num_properties)
    if regime == "seen":
        pool = Pool.from_corpus(corpus, splits.seen_eval)
        types = [t for t in iter_analogy_types(splits.seen_categories, props) if t not in splits.heldout_types]
    elif regime == "unseen" and unseen_mode == "types":
        pool = Pool.from_corpus(corpus, splits.seen_eval)
        seen = set(splits.seen_categories)
        types = sorted(t for t in splits.heldout_types if t.c_i in seen and t.c_o in seen)
    elif regime == "unseen" and unseen_mode == "categories":
        if len(splits.unseen_categories) < 2:
            raise ExhaustionError("unseen-category questions need >= 2 unseen categories")
        pool = Pool.from_corpus(corpus, splits.unseen)
        types = list(iter_analogy_types(splits.unseen_categories, props))
    else:
        raise ValidationError(f"unknown regime {regime!r} / unseen mode {unseen_mode!r}")
    types = [t for t in types if all(k in pool.cells for k in ((t.c_i, t.p_1), (t.c_i, t.p_2), (t.c_o, t.p_1), (t.c_o, t.p_2)))]
    if not types:
        raise ExhaustionError(f"no analogy types available for regime {regime!r}")
    return pool, types


def build_questions(
    splits: Splits,
    regime: str,
    n_questions: int,
    distractor_size: int,
    rng: np.random.Generator,
    unseen_mode: str = "types",
) -> list[AnalogyQuestion]:
    """Sample questions; positives are every pool image in cell ``(c_o, p_2)``.

    ``(i1, i2, i3)`` triples are distinct unless the eligible triple space is
    smaller than ``n_questions``.
    """
    if regime not in REGIMES:
        raise ValidationError(f"regime must be one of {REGIMES}")
    if unseen_mode not in UNSEEN_MODES:
        raise ValidationError(f"unseen_mode must be one of {UNSEEN_MODES}")
    pool, types = _regime_setup(splits, regime, unseen_mode)
    space = sum(
        pool.cells[(t.c_i, t.p_1)].size * pool.cells[(t.c_i, t.p_2)].size * pool.cells[(t.c_o, t.p_1)].size
        for t in types
    )
    unique = space >= n_questions
    seen_triples: set = set()
    all_idx = pool.indices
    questions = []
    while len(questions) < n_questions:
        t = types[int(rng.integers(len(types)))]
        i1 = pool.pick(rng, t.c_i, t.p_1)
        i2 = pool.pick(rng, t.c_i, t.p_2)
        i3 = pool.pick(rng, t.c_o, t.p_1)
        if unique:
            if (i1, i2, i3) in seen_triples:
                continue
            seen_triples.add((i1, i2, i3))
        positives = pool.cells[(t.c_o, t.p_2)]
        banned = np.concatenate([positives, [i1, i2, i3]])
        eligible = all_idx[~np.isin(all_idx, banned)]
        if eligible.size < distractor_size:
            raise ExhaustionError(
                f"pool has {eligible.size} eligible distractors, {distractor_size} requested"
            )
        distractors = np.sort(rng.choice(eligible, size=distractor_size, replace=False))
        questions.append(
            AnalogyQuestion(
                i1, i2, i3,
                tuple(int(p) for p in positives),
                tuple(int(d) for d in distractors),
                t, regime,
            )
        )
    return questions


def question_hash(questions: Sequence[AnalogyQuestion]) -> str:
    h = hashlib.sha256()
    for q in questions:
        h.update(repr((q.i1, q.i2, q.i3, q.positives, q.distractors)).encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ["regime", "loss_mode", "freeze_mode", "seed", "k", "n_distractors", "recall"]


def curve_rows(curve: RecallCurve, regime: str, loss_mode: str, freeze_mode: str, seed: int) -> list[dict]:
    return [
        dict(
            regime=regime, loss_mode=loss_mode, freeze_mode=freeze_mode, seed=seed,
            k=int(k), n_distractors=curve.n_distractors, recall=float(r),
        )
        for k, r in zip(curve.ks, curve.recall)
    ]


def write_results_csv(rows: Iterable[dict], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_audit_csv(curve: RecallCurve, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["question_id", "rank_of_first_positive"])
        for i, r in enumerate(curve.first_positive_rank):
            w.writerow([i, int(r)])


def write_recall_svg(curves: dict[str, RecallCurve], path: str | os.PathLike, title: str = "") -> None:
    """One polyline per labelled curve, log-scale k axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "analogylab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label, c in curves.items():
            ax.plot(c.ks, c.recall, marker="o", ms=3, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("k")
        ax.set_ylabel("recall@k")
        ax.set_ylim(0, 1.02)
        ax.grid(True, which="both", alpha=0.3)
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


@dataclass
class AblationConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    n_unseen_categories: int = 2
    n_heldout_types: int = 6
    test_exemplars: int = 2
    split_seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    seeds: tuple[int, ...] = (0, 1, 2)
    loss_modes: tuple[str, ...] = ("single", "double")
    freeze_modes: tuple[str, ...] = ("fc_only", "fc_plus_lastconv")
    regimes: tuple[str, ...] = ("seen", "unseen")
    unseen_mode: str = "types"
    n_questions: int = 1000
    distractor_size: int = 100
    ks: tuple[int, ...] = (1, 2, 5, 10, 20, 50)


@dataclass
class AblationReport:
    rows: list[dict]
    question_hashes: dict  # (seed, regime) -> hash
    arm_hashes: dict  # (seed, loss_mode, freeze_mode) -> hash of the non-ablated settings
    curves: dict  # (seed, regime, loss_mode, freeze_mode) -> RecallCurve

    def mean_recall(self, regime: str, loss_mode: str, freeze_mode: str, k: int) -> float:
        vals = [
            r["recall"] for r in self.rows
            if (r["regime"], r["loss_mode"], r["freeze_mode"], r["k"]) == (regime, loss_mode, freeze_mode, k)
        ]
        return float(np.mean(vals))


def _rest_hash(hyper: Hyperparams) -> str:
    rest = {k: v for k, v in hyper.as_dict().items() if k not in ("loss_mode", "freeze_mode")}
    return hashlib.sha256(json.dumps(rest, sort_keys=True).encode()).hexdigest()[:16]


def run_ablation(
    config: AblationConfig,
    corpus: Optional[Corpus] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> AblationReport:
    """Train every loss x freeze arm per seed and score it on shared question sets."""
    corpus = corpus if corpus is not None else generate_corpus(config.corpus)
    split = random_split_spec(
        corpus.spec, config.n_unseen_categories, config.n_heldout_types, config.test_exemplars, config.split_seed
    )
    splits = make_splits(corpus, split)
    rows, qhash, ahash, curves = [], {}, {}, {}
    for seed in config.seeds:
        qrng = np.random.default_rng([seed, 1])
        questions = {
            regime: build_questions(
                splits, regime, config.n_questions, config.distractor_size, qrng, config.unseen_mode
            )
            for regime in config.regimes
        }
        for regime, qs in questions.items():
            qhash[(seed, regime)] = question_hash(qs)
        for loss_mode in config.loss_modes:
            for freeze_mode in config.freeze_modes:
                hyper = config.hyper.replace(loss_mode=loss_mode, freeze_mode=freeze_mode, seed=seed)
                ahash[(seed, loss_mode, freeze_mode)] = _rest_hash(hyper)
                if progress:
                    progress(f"seed {seed}: training {loss_mode}/{freeze_mode}")
                params, _ = train(splits, hyper)
                feats = corpus_features(corpus, params, splits.channel_means)
                for regime, qs in questions.items():
                    curve = evaluate(feats, qs, config.ks)
                    curves[(seed, regime, loss_mode, freeze_mode)] = curve
                    rows += curve_rows(curve, regime, loss_mode, freeze_mode, seed)
    return AblationReport(rows, qhash, ahash, curves)


def write_ablation_svg(report: AblationReport, path: str | os.PathLike, regimes: Sequence[str] = REGIMES) -> None:
    """Side-by-side panels per regime; one seed-averaged polyline per arm."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    arms = sorted({(lm, fm) for (_, _, lm, fm) in report.curves})
    with matplotlib.rc_context({"svg.hashsalt": "analogylab", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(regimes), figsize=(5 * len(regimes), 4), squeeze=False)
        for ax, regime in zip(axes[0], regimes):
            for lm, fm in arms:
                cs = [c for (s, r, l, f), c in report.curves.items() if (r, l, f) == (regime, lm, fm)]
                if not cs:
                    continue
                mean = np.mean([c.recall for c in cs], axis=0)
                ax.plot(cs[0].ks, mean, marker="o", ms=3, label=f"{lm} / {fm}")
            ax.set_xscale("log")
            ax.set_xlabel("k")
            ax.set_ylabel("recall@k")
            ax.set_ylim(0, 1.02)
            ax.set_title(regime)
            ax.grid(True, which="both", alpha=0.3)
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
