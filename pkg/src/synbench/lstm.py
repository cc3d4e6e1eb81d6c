"""The regression network: linear input layer with rectifier activation,
one LSTM layer, linear scalar output, with exact analytic gradients via
backpropagation through time.

All arithmetic is 64-bit.  Forward and backward are pure functions of
their inputs; dropout (off by default) is the only stochastic element and
draws from an explicitly passed generator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator

import numpy as np

CHECKPOINT_MAGIC = b"SYNB1"

#: Gate order used throughout: input, forget, output, candidate.
GATES = ("i", "f", "o", "g")


class ShapeError(ValueError):
    """Array shapes inconsistent with the network dimensions."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during computation."""


@dataclass(frozen=True)
class NetworkDims:
    input_size: int
    hidden_size: int
    output_size: int = 1

    def __post_init__(self) -> None:
        if self.input_size < 1 or self.hidden_size < 1:
            raise ShapeError("input_size and hidden_size must be >= 1")
        if self.output_size != 1:
            raise ShapeError("only scalar output is supported")


@dataclass
class ModelParams:
    """All weights, in checkpoint field order.

    Gate weights come as recurrent part `u_*` (H x H), input part `w_*`
    (H x H, applied to the rectified input-layer activations), and bias
    `b_*` (H), for gates i, f, o, g.
    """

    w_in: np.ndarray   # (H, D)
    b_in: np.ndarray   # (H,)
    u_i: np.ndarray
    w_i: np.ndarray
    b_i: np.ndarray
    u_f: np.ndarray
    w_f: np.ndarray
    b_f: np.ndarray
    u_o: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    u_g: np.ndarray
    w_g: np.ndarray
    b_g: np.ndarray
    w_out: np.ndarray  # (1, H)
    b_out: np.ndarray  # (1,)

    @property
    def dims(self) -> NetworkDims:
        return NetworkDims(self.w_in.shape[1], self.w_in.shape[0])

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: arr.copy() for name, arr in self.arrays()})

    def validate(self) -> None:
        H, D = self.w_in.shape
        expected = _shapes(NetworkDims(D, H))
        for name, arr in self.arrays():
            if arr.shape != expected[name]:
                raise ShapeError(
                    f"{name} has shape {arr.shape}, expected {expected[name]}"
                )
            if not np.isfinite(arr).all():
                raise NumericError(f"parameter {name} contains non-finite values")

    @classmethod
    def zeros(cls, dims: NetworkDims) -> "ModelParams":
        return cls(**{name: np.zeros(shape) for name, shape in _shapes(dims).items()})


def _shapes(dims: NetworkDims) -> dict[str, tuple[int, ...]]:
    H, D = dims.hidden_size, dims.input_size
    shapes: dict[str, tuple[int, ...]] = {"w_in": (H, D), "b_in": (H,)}
    for gate in GATES:
        shapes[f"u_{gate}"] = (H, H)
        shapes[f"w_{gate}"] = (H, H)
        shapes[f"b_{gate}"] = (H,)
    shapes["w_out"] = (1, H)
    shapes["b_out"] = (1,)
    return shapes


def init_params(dims: NetworkDims, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; zero biases
    except the forget-gate bias, which starts at 1."""
    values: dict[str, np.ndarray] = {}
    for name, shape in _shapes(dims).items():
        if name.startswith("b_"):
            values[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            values[name] = rng.uniform(-bound, bound, size=shape)
    values["b_f"] = np.ones(dims.hidden_size)
    return ModelParams(**values)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # numerically stable on both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    """Per-timestep intermediates needed by the backward pass."""

    x: np.ndarray                 # (B, L, D)
    relu_mask: list[np.ndarray]   # (B, H) per step, pre-activation > 0
    a: list[np.ndarray]           # rectified (and dropped-out) input activations
    gates: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    c: list[np.ndarray]
    tanh_c: list[np.ndarray]
    h: list[np.ndarray]
    drop_mask: list[np.ndarray] | None
    dropout: float
    param_shapes: dict[str, tuple[int, ...]]


def forward(
    params: ModelParams,
    x: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    want_cache: bool = True,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the network over a batch of windows.

    x has shape (B, L, D); returns predictions of shape (B, L) and, when
    requested, the cache for the backward pass.  Initial hidden and cell
    states are zero.  Dropout, if enabled, applies to the rectified
    input-layer activations only (inverted scaling, fresh mask per step).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"input must be (B, L, D), got shape {x.shape}")
    dims = params.dims
    B, L, D = x.shape
    if D != dims.input_size:
        raise ShapeError(f"input feature size {D} != network input size {dims.input_size}")
    if not np.isfinite(x).all():
        raise NumericError("input window contains non-finite values")
    if dropout and rng is None:
        raise ValueError("dropout requires an rng")
    H = dims.hidden_size

    # gates stacked into single matmuls per step: order i, f, o, g
    w_stack = np.concatenate([params.w_i, params.w_f, params.w_o, params.w_g])
    u_stack = np.concatenate([params.u_i, params.u_f, params.u_o, params.u_g])
    b_stack = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_g])

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    yhat = np.empty((B, L))
    cache = (
        ForwardCache(
            x=x,
            relu_mask=[],
            a=[],
            gates=[],
            c=[],
            tanh_c=[],
            h=[],
            drop_mask=[] if dropout else None,
            dropout=dropout,
            param_shapes=_shapes(dims),
        )
        if want_cache
        else None
    )

    for t in range(L):
        s = x[:, t, :] @ params.w_in.T + params.b_in
        a = np.maximum(s, 0.0)
        if dropout:
            mask = (rng.random(a.shape) >= dropout).astype(np.float64)
            a = a * mask / (1.0 - dropout)
        z = a @ w_stack.T + h @ u_stack.T + b_stack
        gi = _sigmoid(z[:, :H])
        gf = _sigmoid(z[:, H : 2 * H])
        go = _sigmoid(z[:, 2 * H : 3 * H])
        gg = np.tanh(z[:, 3 * H :])
        c = gf * c + gi * gg
        tanh_c = np.tanh(c)
        h = go * tanh_c
        y_t = h @ params.w_out[0] + params.b_out[0]
        if not np.isfinite(y_t).all():
            raise NumericError(f"non-finite network output at timestep {t}")
        yhat[:, t] = y_t
        if cache is not None:
            cache.relu_mask.append(s > 0.0)
            cache.a.append(a)
            cache.gates.append((gi, gf, go, gg))
            cache.c.append(c)
            cache.tanh_c.append(tanh_c)
            cache.h.append(h)
            if dropout:
                cache.drop_mask.append(mask)
    return yhat, cache


def backward(params: ModelParams, cache: ForwardCache, dl_dy: np.ndarray) -> ModelParams:
    """Exact gradients of a scalar loss with per-step derivatives dl_dy.

    dl_dy has shape (B, L) matching the forward predictions; the return
    value is a gradient container shaped exactly like ModelParams.
    """
    if cache.param_shapes != _shapes(params.dims):
        raise ShapeError("cache was produced by a network of different dimensions")
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    B, L, D = cache.x.shape
    if dl_dy.shape != (B, L):
        raise ShapeError(f"dl_dy must have shape {(B, L)}, got {dl_dy.shape}")
    H = params.dims.hidden_size

    w_stack = np.concatenate([params.w_i, params.w_f, params.w_o, params.w_g])
    u_stack = np.concatenate([params.u_i, params.u_f, params.u_o, params.u_g])

    g_w_stack = np.zeros_like(w_stack)
    g_u_stack = np.zeros_like(u_stack)
    g_b_stack = np.zeros(4 * H)
    grads = ModelParams.zeros(params.dims)

    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        gi, gf, go, gg = cache.gates[t]
        tanh_c = cache.tanh_c[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros((B, H))
        h_prev = cache.h[t - 1] if t > 0 else np.zeros((B, H))
        a = cache.a[t]

        dy = dl_dy[:, t]
        grads.w_out += (dy @ cache.h[t])[None, :]
        grads.b_out += dy.sum()
        dh = dy[:, None] * params.w_out + dh_next

        do = dh * tanh_c
        dc = dc_next + dh * go * (1.0 - tanh_c**2)
        df = dc * c_prev
        di = dc * gg
        dg = dc * gi
        dc_next = dc * gf

        dz = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                do * go * (1.0 - go),
                dg * (1.0 - gg**2),
            ],
            axis=1,
        )
        g_w_stack += dz.T @ a
        g_u_stack += dz.T @ h_prev
        g_b_stack += dz.sum(axis=0)
        da = dz @ w_stack
        dh_next = dz @ u_stack

        if cache.dropout:
            da = da * cache.drop_mask[t] / (1.0 - cache.dropout)
        ds = da * cache.relu_mask[t]
        grads.w_in += ds.T @ cache.x[:, t, :]
        grads.b_in += ds.sum(axis=0)

    for n, gate in enumerate(GATES):
        setattr(grads, f"w_{gate}", g_w_stack[n * H : (n + 1) * H])
        setattr(grads, f"u_{gate}", g_u_stack[n * H : (n + 1) * H])
        setattr(grads, f"b_{gate}", g_b_stack[n * H : (n + 1) * H])
    return grads


def dumps_checkpoint(params: ModelParams) -> bytes:
    """Serialize: magic `SYNB1`, dims as little-endian uint32, then every
    parameter array as little-endian float64 in field order."""
    params.validate()
    dims = params.dims
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<III", dims.input_size, dims.hidden_size, dims.output_size),
    ]
    for _, arr in params.arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def loads_checkpoint(raw: bytes, origin: str = "checkpoint") -> ModelParams:
    """Deserialize, validating magic bytes and total size."""
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{origin}: bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)
    D, H, out = struct.unpack_from("<III", raw, offset)
    offset += struct.calcsize("<III")
    if out != 1:
        raise ValueError(f"{origin}: unsupported output size {out}")
    dims = NetworkDims(D, H)
    shapes = _shapes(dims)
    expected = offset + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != expected:
        raise ValueError(
            f"{origin}: size {len(raw)} does not match dims D={D} H={H} "
            f"(expected {expected})"
        )
    values = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        values[name] = arr.reshape(shape).astype(np.float64)
        offset += 8 * count
    params = ModelParams(**values)
    params.validate()
    return params


def load_checkpoint(path: str | Path) -> ModelParams:
    return loads_checkpoint(Path(path).read_bytes(), origin=str(path))
