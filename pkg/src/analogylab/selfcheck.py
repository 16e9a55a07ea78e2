"""Fast numerical self-test: layer gradients, end-to-end gradients, loss identities, samplers.

Each check returns a :class:`CheckResult`. ``corrupt_layer`` deliberately
perturbs the analytic gradient of one encoder layer so the end-to-end check
can be seen to fail and name that layer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .corpus import CorpusSpec, generate_corpus, make_splits, random_split_spec
from .model import (
    LAYER_NAMES,
    Hyperparams,
    init_encoder,
    loss_double_margin,
    loss_single_margin,
    quadruple_loss_and_grads,
)
from .quadruples import (
    AnalogyType,
    Pool,
    is_valid_analogy,
    sample_negative_hard,
    sample_negative_random,
    sample_positive,
)
from .tensor import (
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    grad_check,
    l2_normalize,
    l2_normalize_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
)

GRAD_TOL = 1e-4
# conv1 weights move thousands of relu and max-pool decisions; a step of 1e-5
# occasionally straddles one of those kinks, 1e-6 does not and is still far above rounding noise
END_TO_END_STEP = 1e-6

# margins wide enough that every quadruple of random features sits on an active hinge
CHECK_MARGINS = dict(m=2.0, m_pos=0.2, m_neg=2.0)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def primitive_gradient_errors(seed: int) -> dict[str, float]:
    """Max relative error of each primitive's backward pass at one random point."""
    rng = np.random.default_rng(seed)
    out = {}
    x = rng.normal(size=(2, 2, 4, 4))
    k, b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    w = rng.normal(size=(2, 3, 4, 4))
    dx, dk, db = conv2d_backward(w, x, k)
    out["conv2d"] = max(
        grad_check(lambda z: np.sum(w * conv2d(z, k, b)), x, dx),
        grad_check(lambda z: np.sum(w * conv2d(x, z, b)), k, dk),
        grad_check(lambda z: np.sum(w * conv2d(x, k, z)), b, db),
    )
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(1, 2, 2))
    out["maxpool2d"] = grad_check(lambda z: np.sum(w * maxpool2d(z)), x, maxpool2d_backward(w, x))
    x, wt, b = rng.normal(size=5), rng.normal(size=(3, 5)), rng.normal(size=3)
    g = rng.normal(size=3)
    dx, dw, db = dense_backward(g, x, wt)
    out["dense"] = max(
        grad_check(lambda z: g @ dense(z, wt, b), x, dx),
        grad_check(lambda z: g @ dense(x, z, b), wt, dw),
        grad_check(lambda z: g @ dense(x, wt, z), b, db),
    )
    x = rng.normal(size=8)
    x[np.abs(x) < 1e-3] = 0.5
    g = rng.normal(size=8)
    out["relu"] = grad_check(lambda z: g @ relu(z), x, relu_backward(g, x))
    v = rng.normal(size=6) + 0.5
    g = rng.normal(size=6)
    out["l2_normalize"] = grad_check(lambda z: g @ l2_normalize(z), v, l2_normalize_backward(g, v))
    return out


def end_to_end_errors(
    seed: int,
    loss_mode: str = "double",
    n_quads: int = 2,
    coords_per_layer: int = 8,
    image_size: int = 24,
    corrupt_layer: Optional[str] = None,
    h: float = END_TO_END_STEP,
) -> dict[str, float]:
    """Mean-loss gradient vs central differences for every encoder layer.

    Random images go through the four shared branches of ``n_quads``
    quadruples (alternating positive and negative). For each layer a random
    subset of weight and bias coordinates is checked.
    """
    rng = np.random.default_rng(seed)
    params = init_encoder(image_size, seed=seed).set_freeze("all")
    images = rng.normal(size=(n_quads, 4, 3, image_size, image_size))
    y = (np.arange(n_quads) % 2 == 0).astype(float)
    hyper = Hyperparams(loss_mode=loss_mode, **CHECK_MARGINS)
    grads = quadruple_loss_and_grads(params, images, y, hyper, all_layers=True).grads
    errors = {}
    for name in LAYER_NAMES:
        layer = params[name]
        dw, db = grads[name]
        if name == corrupt_layer:
            dw = dw * 1.5 + 1e-3
        worst = 0.0
        for attr, analytic in (("weight", dw), ("bias", db)):
            original = getattr(layer, attr)
            n = min(coords_per_layer, original.size)
            idx = rng.choice(original.size, size=n, replace=False)

            def f(z, attr=attr):
                setattr(layer, attr, z)
                try:
                    return quadruple_loss_and_grads(params, images, y, hyper).loss
                finally:
                    setattr(layer, attr, original)

            worst = max(worst, grad_check(f, original, analytic, h=h, indices=idx))
        errors[name] = worst
    return errors


def loss_identity_error(n: int = 10_000, seed: int = 0, dim: int = 8) -> float:
    """Max |double(m_P=0, m_N) - single(m=m_N)| over random unit-vector inputs and margins."""
    rng = np.random.default_rng(seed)
    x12 = l2_normalize(rng.normal(size=(n, dim)))
    x34 = l2_normalize(rng.normal(size=(n, dim)))
    y = rng.integers(0, 2, size=n).astype(float)
    worst = 0.0
    for m in rng.uniform(0.05, 2.0, size=20):
        diff = loss_double_margin(x12, x34, y, 0.0, m) - loss_single_margin(x12, x34, y, m)
        worst = max(worst, float(np.abs(diff).max()))
    return worst


def sampler_violations(n: int = 2000, seed: int = 0) -> dict[str, int]:
    """Count sampler outputs that break soundness or leak held-out types."""
    spec = CorpusSpec(exemplars_per_cell=2)
    corpus = generate_corpus(spec)
    splits = make_splits(corpus, random_split_spec(spec, 2, 6, seed=seed))
    pool = Pool.from_corpus(corpus, splits.train)
    reg = splits.heldout_types
    rng = np.random.default_rng(seed)
    bad = {"positive": 0, "leak": 0, "random_negative": 0, "hard_negative": 0}
    for _ in range(n):
        lab = pool.quad_labels(sample_positive(rng, pool, reg))
        bad["positive"] += not is_valid_analogy(lab)
        bad["leak"] += AnalogyType(lab[0][0], lab[2][0], lab[0][1], lab[1][1]) in reg
        bad["random_negative"] += is_valid_analogy(pool.quad_labels(sample_negative_random(rng, pool)))
        bad["hard_negative"] += is_valid_analogy(pool.quad_labels(sample_negative_hard(rng, pool, reg)))
    return bad


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed check, reported with its message
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, time.perf_counter() - t0)


def run_selfcheck(seeds: int = 5, corrupt_layer: Optional[str] = None) -> list[CheckResult]:
    results = []

    def primitives():
        worst: dict[str, float] = {}
        for s in range(seeds):
            for k, v in primitive_gradient_errors(s).items():
                worst[k] = max(worst.get(k, 0.0), v)
        bad = [k for k, v in worst.items() if v >= GRAD_TOL]
        text = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
        return not bad, (f"FAILED {bad}: " if bad else "") + text

    def end_to_end(mode):
        def run():
            worst: dict[str, float] = {}
            for s in range(seeds):
                for k, v in end_to_end_errors(s, mode, corrupt_layer=corrupt_layer).items():
                    worst[k] = max(worst.get(k, 0.0), v)
            bad = [k for k, v in worst.items() if v >= GRAD_TOL]
            text = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
            return not bad, (f"gradient mismatch in layer(s) {', '.join(bad)}; " if bad else "") + text

        return run

    def identity():
        err = loss_identity_error(2000)
        return err == 0.0, f"max difference {err:.1e}"

    def samplers():
        bad = sampler_violations()
        return not any(bad.values()), ", ".join(f"{k}={v}" for k, v in bad.items())

    results.append(_timed("primitive gradients", primitives))
    results.append(_timed("end-to-end gradient (double margin)", end_to_end("double")))
    results.append(_timed("end-to-end gradient (single margin)", end_to_end("single")))
    results.append(_timed("loss identity", identity))
    results.append(_timed("sampler soundness", samplers))
    return results
