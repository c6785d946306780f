"""Dense 2-D float64 tensors and layers with explicit forward/backward passes.

Everything here is deliberately small: the three networks used by the
trainer only need affine maps, a few pointwise activations, per-row layer
normalization, grouped softmax and a single-head self-attention over
fixed-width tokens. Backward passes are hand-written vector-Jacobian
products, validated against central finite differences by ``grad_check``.

All operations are pure: they never mutate their inputs and hold no
hidden RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "Tensor",
    "Layer",
    "OptimState",
    "LAYER_KINDS",
    "as_tensor",
    "affine",
    "leaky_relu",
    "tanh_layer",
    "sigmoid_layer",
    "softmax_group",
    "layer_norm",
    "self_attention",
    "forward",
    "backward",
    "grad_check",
    "optim_state",
    "adam_update",
]

# A Tensor is a C-contiguous 2-D float64 ndarray; shape (rows, cols).
Tensor = np.ndarray

LAYER_KINDS = (
    "affine",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "softmax_group",
    "layer_norm",
    "self_attention",
)

LAYER_NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2


def as_tensor(values) -> Tensor:
    """Coerce to a 2-D float64 array, rejecting NaN/Inf and wrong rank."""
    t = np.asarray(values, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape(1, -1)
    if t.ndim != 2:
        raise ValueError(f"tensor must be 2-D, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite entries")
    return np.ascontiguousarray(t)


@dataclass
class Layer:
    """A layer descriptor: kind tag, parameter tensors, scalar config."""

    kind: str
    params: list[Tensor] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def affine(n_in: int, n_out: int, rng: np.random.Generator | None = None) -> Layer:
    """Affine map x @ W + b with W (n_in, n_out) and b (1, n_out)."""
    if rng is None:
        w = np.zeros((n_in, n_out))
    else:
        w = rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_in, n_out))
    return Layer("affine", [w, np.zeros((1, n_out))])


def leaky_relu(slope: float = LEAKY_SLOPE) -> Layer:
    return Layer("leaky_relu", config={"slope": float(slope)})


def tanh_layer() -> Layer:
    return Layer("tanh")


def sigmoid_layer() -> Layer:
    return Layer("sigmoid")


def softmax_group(groups: list[tuple[int, int]]) -> Layer:
    """Row-wise softmax within each [start, stop) column group.

    Groups must be disjoint and ascending; columns not covered by any
    group pass through unchanged.
    """
    norm = [(int(a), int(b)) for a, b in groups]
    prev = 0
    for a, b in norm:
        if not 0 <= a < b:
            raise ValueError(f"bad softmax group ({a}, {b})")
        if a < prev:
            raise ValueError("softmax groups must be disjoint and ascending")
        prev = b
    return Layer("softmax_group", config={"groups": norm})


def layer_norm(width: int) -> Layer:
    """Per-row normalization with learnable gain and bias of the feature width."""
    return Layer("layer_norm", [np.ones((1, width)), np.zeros((1, width))])


def self_attention(token_width: int, rng: np.random.Generator | None = None) -> Layer:
    """Single-head attention over tokens of width ``token_width``.

    The input row is reshaped into consecutive tokens; query/key/value and
    output projections are square in the token width. No positional
    encoding, so the layer is permutation-equivariant over tokens.
    """
    d = int(token_width)
    if d < 1:
        raise ValueError("token_width must be >= 1")
    scale = 1.0 / np.sqrt(d)
    if rng is None:
        ps = [np.zeros((d, d)) for _ in range(4)]
    else:
        ps = [rng.normal(scale=scale, size=(d, d)) for _ in range(4)]
    return Layer("self_attention", ps, config={"token_width": d})


def _expected_width(layer: Layer) -> int | None:
    if layer.kind == "affine":
        return layer.params[0].shape[0]
    if layer.kind == "layer_norm":
        return layer.params[0].shape[1]
    return None


def _check_input(layer: Layer, x: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{layer.kind}: input must be 2-D with batch >= 1, got {x.shape}")
    want = _expected_width(layer)
    if want is not None and x.shape[1] != want:
        raise ValueError(f"{layer.kind}: input width {x.shape[1]} != expected {want}")
    if layer.kind == "softmax_group":
        groups = layer.config["groups"]
        if groups and groups[-1][1] > x.shape[1]:
            raise ValueError(
                f"softmax_group: group end {groups[-1][1]} exceeds width {x.shape[1]}"
            )
    if layer.kind == "self_attention":
        d = layer.config["token_width"]
        if x.shape[1] % d != 0 or x.shape[1] == 0:
            raise ValueError(
                f"self_attention: width {x.shape[1]} not a multiple of token width {d}"
            )
    return x


def _softmax_rows(a: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def forward(layer: Layer, x: Tensor) -> tuple[Tensor, tuple]:
    """Run the layer; returns (output, cache) where cache feeds ``backward``."""
    x = _check_input(layer, x)
    kind = layer.kind
    if kind == "affine":
        w, b = layer.params
        return x @ w + b, (kind, x)
    if kind == "leaky_relu":
        s = layer.config.get("slope", LEAKY_SLOPE)
        return np.where(x > 0, x, s * x), (kind, x)
    if kind == "tanh":
        t = np.tanh(x)
        return t, (kind, t)
    if kind == "sigmoid":
        p = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
        return p, (kind, p)
    if kind == "softmax_group":
        y = x.copy()
        for a, b in layer.config["groups"]:
            y[:, a:b] = _softmax_rows(x[:, a:b])
        return y, (kind, y)
    if kind == "layer_norm":
        gain, bias = layer.params
        mu = x.mean(axis=1, keepdims=True)
        d = x - mu
        var = np.mean(d * d, axis=1, keepdims=True)
        # epsilon floors the variance, so non-degenerate rows normalize to
        # exactly unit variance and constant rows map to zero pre-affine
        inv = 1.0 / np.sqrt(np.maximum(var, LAYER_NORM_EPS))
        xhat = d * inv
        return gain * xhat + bias, (kind, xhat, inv, var)
    if kind == "self_attention":
        wq, wk, wv, wo = layer.params
        d = layer.config["token_width"]
        batch, width = x.shape
        t = width // d
        xt = x.reshape(batch, t, d)
        q = xt @ wq
        k = xt @ wk
        v = xt @ wv
        scores = np.einsum("bte,bse->bts", q, k) / np.sqrt(d)
        attn = _softmax_rows(scores, axis=2)
        h = np.einsum("bts,bsd->btd", attn, v)
        y = (h @ wo).reshape(batch, width)
        return y, (kind, xt, q, k, v, attn, h)
    raise ValueError(f"unknown layer kind {kind!r}")


def backward(layer: Layer, cache: tuple, d_output: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Vector-Jacobian product: maps d_output to (d_input, d_params)."""
    if not isinstance(cache, tuple) or not cache or cache[0] != layer.kind:
        raise ValueError(f"{layer.kind}: missing or stale cache")
    dy = np.asarray(d_output, dtype=np.float64)
    kind = layer.kind
    if kind == "affine":
        _, x = cache
        if dy.shape != (x.shape[0], layer.params[0].shape[1]):
            raise ValueError(f"affine: d_output shape {dy.shape} does not match forward")
        w, _ = layer.params
        dx = dy @ w.T
        dw = x.T @ dy
        db = dy.sum(axis=0, keepdims=True)
        return dx, [dw, db]
    if kind == "leaky_relu":
        _, x = cache
        _check_dy(dy, x.shape, kind)
        s = layer.config.get("slope", LEAKY_SLOPE)
        return dy * np.where(x > 0, 1.0, s), []
    if kind == "tanh":
        _, t = cache
        _check_dy(dy, t.shape, kind)
        return dy * (1.0 - t * t), []
    if kind == "sigmoid":
        _, p = cache
        _check_dy(dy, p.shape, kind)
        return dy * p * (1.0 - p), []
    if kind == "softmax_group":
        _, y = cache
        _check_dy(dy, y.shape, kind)
        dx = dy.copy()
        for a, b in layer.config["groups"]:
            yg = y[:, a:b]
            dg = dy[:, a:b]
            dot = np.sum(dg * yg, axis=1, keepdims=True)
            dx[:, a:b] = yg * (dg - dot)
        return dx, []
    if kind == "layer_norm":
        _, xhat, inv, var = cache
        _check_dy(dy, xhat.shape, kind)
        gain, _ = layer.params
        dgain = np.sum(dy * xhat, axis=0, keepdims=True)
        dbias = dy.sum(axis=0, keepdims=True)
        dxhat = dy * gain
        mean_d = dxhat.mean(axis=1, keepdims=True)
        # the variance term only flows where the floor is inactive
        live = var > LAYER_NORM_EPS
        mean_dx = np.mean(dxhat * xhat, axis=1, keepdims=True)
        dx = inv * (dxhat - mean_d - np.where(live, xhat * mean_dx, 0.0))
        return dx, [dgain, dbias]
    if kind == "self_attention":
        _, xt, q, k, v, attn, h = cache
        wq, wk, wv, wo = layer.params
        d = layer.config["token_width"]
        batch, t, _ = xt.shape
        if dy.shape != (batch, t * d):
            raise ValueError(f"self_attention: d_output shape {dy.shape} does not match forward")
        dyt = dy.reshape(batch, t, d)
        dwo = np.einsum("btd,bte->de", h, dyt)
        dh = dyt @ wo.T
        dattn = np.einsum("btd,bsd->bts", dh, v)
        dv = np.einsum("bts,btd->bsd", attn, dh)
        dot = np.sum(dattn * attn, axis=2, keepdims=True)
        dscores = attn * (dattn - dot) / np.sqrt(d)
        dq = np.einsum("bts,bse->bte", dscores, k)
        dk = np.einsum("bts,bte->bse", dscores, q)
        dxt = dq @ wq.T + dk @ wk.T + dv @ wv.T
        dwq = np.einsum("btd,bte->de", xt, dq)
        dwk = np.einsum("btd,bte->de", xt, dk)
        dwv = np.einsum("btd,bte->de", xt, dv)
        return dxt.reshape(batch, t * d), [dwq, dwk, dwv, dwo]
    raise ValueError(f"unknown layer kind {kind!r}")


def _check_dy(dy: np.ndarray, shape: tuple, kind: str) -> None:
    if dy.shape != shape:
        raise ValueError(f"{kind}: d_output shape {dy.shape} != forward output shape {shape}")


def _gradcheck_input(layer: Layer, rng: np.random.Generator) -> Tensor:
    rows = 3
    want = _expected_width(layer)
    if want is not None:
        cols = want
    elif layer.kind == "self_attention":
        cols = 3 * layer.config["token_width"]
    elif layer.kind == "softmax_group":
        groups = layer.config["groups"]
        cols = max(5, groups[-1][1] if groups else 5)
    else:
        cols = 5
    return rng.normal(size=(rows, cols))


def grad_check(layer: Layer, trials: int, seed: int, step: float = 1e-5) -> float:
    """Worst relative error of ``backward`` vs central finite differences.

    Perturbs every input and parameter coordinate over ``trials`` random
    (input, cotangent) draws. Deterministic given the seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0

    def objective(x):
        y, _ = forward(layer, x)
        return float(np.sum(y * cot))

    for _ in range(trials):
        x = _gradcheck_input(layer, rng)
        y, cache = forward(layer, x)
        cot = rng.normal(size=y.shape)
        dx, dparams = backward(layer, cache, cot)

        tensors = [x] + layer.params
        grads = [dx] + dparams
        for tensor, grad in zip(tensors, grads):
            flat = tensor.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                hi = objective(x)
                flat[i] = keep - step
                lo = objective(x)
                flat[i] = keep
                numeric = (hi - lo) / (2 * step)
                err = abs(gflat[i] - numeric) / max(abs(gflat[i]) + abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst


@dataclass
class OptimState:
    """Adam accumulators; shapes mirror the parameter list they update."""

    m: list[Tensor]
    v: list[Tensor]
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8


def optim_state(params: list[Tensor], lr: float = 2e-4, beta1: float = 0.5,
                beta2: float = 0.9, eps: float = 1e-8) -> OptimState:
    return OptimState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_update(params: list[Tensor], grads: list[Tensor], state: OptimState) -> None:
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_update: params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"adam_update: grad shape {g.shape} != param shape {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
