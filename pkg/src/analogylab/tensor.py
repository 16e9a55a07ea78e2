"""Layer primitives with analytic backward passes and a finite-difference checker.

Tensors are plain ``numpy.ndarray`` objects in float64. Spatial layers take
batched ``(N, C, H, W)`` input; a single ``(C, H, W)`` image is promoted and
the result squeezed back.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DegeneratePair, NumericalError, ShapeError

EPS_NORM = 1e-8


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (N, C, H, W) input, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------------------
# relu
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass ``dy`` where ``x > 0``; the kink at exactly zero gets subgradient 0."""
    return np.where(np.asarray(x) > 0.0, dy, 0.0)


# ---------------------------------------------------------------------------
# conv2d: stride 1, same padding, odd square kernels
# ---------------------------------------------------------------------------


def _check_conv(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> int:
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"kernels must be (K, C, R, R), got {kernels.shape}")
    if kernels.shape[2] % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {kernels.shape[2]}")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernels expect {kernels.shape[1]}"
        )
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"bias must have shape ({kernels.shape[0]},), got {bias.shape}")
    return kernels.shape[2] // 2


def _im2col(x: np.ndarray, r: int, pad: int) -> np.ndarray:
    """``(N, C*R*R, H*W)`` patch matrix; the middle axis is ordered like ``kernels[k]``."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    shifted = [xp[:, :, i : i + h, j : j + w] for i in range(r) for j in range(r)]
    return np.stack(shifted, axis=2).reshape(n, c * r * r, h * w)


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Cross-correlation with same padding plus a per-kernel bias."""
    return conv2d_with_patches(x, kernels, bias)[0]


def conv2d_with_patches(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`conv2d` that also returns the patch matrix for reuse in backward."""
    xb, single = _as_batch(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    pad = _check_conv(xb, kernels, bias)
    n, _, h, w = xb.shape
    k = kernels.shape[0]
    cols = _im2col(xb, kernels.shape[2], pad)
    out = (np.matmul(kernels.reshape(k, -1), cols) + bias[:, None]).reshape(n, k, h, w)
    return (out[0] if single else out), cols


def conv2d_backward(
    dy: np.ndarray,
    x: np.ndarray,
    kernels: np.ndarray,
    need_dx: bool = True,
    patches: Optional[np.ndarray] = None,
) -> tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Return ``(dx, dkernels, dbias)`` for :func:`conv2d`.

    ``dx`` is None when ``need_dx`` is false. ``patches`` may carry the
    matrix from :func:`conv2d_with_patches` to skip rebuilding it.
    """
    xb, single = _as_batch(x)
    dyb, _ = _as_batch(dy)
    kernels = np.asarray(kernels, dtype=np.float64)
    n, c, h, w = xb.shape
    k, _, r, _ = kernels.shape
    pad = r // 2
    cols = _im2col(xb, r, pad) if patches is None else patches
    dy_flat = dyb.reshape(n, k, h * w)
    dk = np.matmul(dy_flat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernels.shape)
    db = dy_flat.sum(axis=(0, 2))
    if not need_dx:
        return None, dk, db
    dcols = np.matmul(kernels.reshape(k, -1).T, dy_flat).reshape(n, c, r * r, h, w)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(r):
        for j in range(r):
            dxp[:, :, i : i + h, j : j + w] += dcols[:, :, i * r + j]
    dx = dxp[:, :, pad : pad + h, pad : pad + w]
    dx = np.ascontiguousarray(dx[0] if single else dx)
    return dx, dk, db


# ---------------------------------------------------------------------------
# maxpool2d: non-overlapping 2x2
# ---------------------------------------------------------------------------


def _windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be divisible by 2, got {h}x{w}")
    # row-major order inside each window: (0,0), (0,1), (1,0), (1,1)
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def maxpool2d(x: np.ndarray, window: int = 2) -> np.ndarray:
    if window != 2:
        raise ShapeError("only 2x2 pooling is supported")
    xb, single = _as_batch(x)
    out = _windows(xb).max(axis=-1)
    return out[0] if single else out


def maxpool2d_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Route each gradient to its window's argmax; ties go to the first element."""
    xb, single = _as_batch(x)
    dyb, _ = _as_batch(dy)
    n, c, h, w = xb.shape
    arg = _windows(xb).argmax(axis=-1)
    routed = (np.arange(4) == arg[..., None]) * dyb[..., None]
    dx = (
        routed.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )
    return dx[0] if single else dx


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------


def dense(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"cannot apply {weight.shape} weights to input of shape {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    return x @ weight.T + bias


def dense_backward(
    dy: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dx, dweight, dbias)`` for :func:`dense`; works for 1-D or batched x."""
    dy = np.asarray(dy, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    dx = dy @ weight
    if x.ndim == 1:
        return dx, np.outer(dy, x), dy.copy()
    return dx, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------------------
# l2 normalisation along the last axis
# ---------------------------------------------------------------------------


def l2_normalize(v: np.ndarray, eps: float = EPS_NORM, strict: bool = False) -> np.ndarray:
    """Scale ``v`` to unit length along its last axis.

    In strict mode a vector shorter than ``eps`` raises :class:`DegeneratePair`;
    otherwise the denominator is clamped to ``eps``.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if strict and np.any(norm < eps):
        raise DegeneratePair(f"vector norm below {eps:g}")
    return v / np.maximum(norm, eps)


def l2_normalize_backward(dy: np.ndarray, v: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    """Apply the Jacobian ``(I - u u^T) / ||v||``, or ``I / eps`` where clamped."""
    v = np.asarray(v, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    clamped = norm < eps
    safe = np.where(clamped, eps, norm)
    u = v / safe
    proj = dy - u * np.sum(u * dy, axis=-1, keepdims=True)
    return np.where(clamped, dy / eps, proj / safe)


# ---------------------------------------------------------------------------
# SGD with momentum
# ---------------------------------------------------------------------------


def sgd_update(params, grads: dict, lr: float, momentum: float = 0.0) -> None:
    """In-place momentum step over every unfrozen layer of ``params``.

    ``params`` is any object with a ``layers`` sequence whose items expose
    ``name``, ``weight``, ``bias``, ``vel_w``, ``vel_b`` and ``frozen``.
    ``grads`` maps layer name to ``(dweight, dbias)``. Layers missing from
    ``grads`` and frozen layers are left bit-identical.
    """
    for layer in params.layers:
        if layer.frozen or layer.name not in grads:
            continue
        gw, gb = grads[layer.name]
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError(
                f"{layer.name}: gradient shapes {gw.shape}/{gb.shape} do not match "
                f"parameters {layer.weight.shape}/{layer.bias.shape}"
            )
        layer.vel_w *= momentum
        layer.vel_w -= lr * gw
        layer.vel_b *= momentum
        layer.vel_b -= lr * gb
        layer.weight += layer.vel_w
        layer.bias += layer.vel_b


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------


def numeric_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    indices: Optional[Iterable[int]] = None,
) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (flat ``indices`` only, if given).

    Coordinates outside ``indices`` are returned as NaN.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def grad_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``. Pass ``indices``
    (flat positions) to check a subset, e.g. to skip points at a relu kink.
    """
    if not np.isfinite(f(np.array(x, dtype=np.float64))):
        raise NumericalError("function is not finite at the check point")
    num = numeric_gradient(f, x, h, indices)
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = num.reshape(-1)
    sel = np.arange(n.size) if indices is None else np.asarray(list(indices), dtype=int)
    if sel.size == 0:
        return 0.0
    return float(relative_error(a[sel], n[sel]).max())
