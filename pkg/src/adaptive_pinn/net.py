"""Fully connected tanh network with exact input derivatives.

The network maps ``(x, t) -> u`` where ``x`` has ``d`` spatial components.
Input derivatives are carried forward through the layers as extra
"channels" alongside the value: one channel per first derivative
(spatial axes then time) and one channel per spatial second derivative
(the Hessian diagonal).  Parameter gradients of any scalar loss built from
those channels are obtained by a reverse pass over the same computation.

Channel layout of the internal ``(C, B, width)`` stacks::

    0                 value
    1 .. d            d/dx_i
    d + 1             d/dt
    d + 2 .. 2d + 1   d^2/dx_i^2
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATION = "tanh"


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss or its gradient is not finite."""


@dataclass(frozen=True)
class MLP:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = ACTIVATION
    seed: int | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if sizes[-1] != 1:
            raise ValueError("output dimension must be 1")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("number of weight/bias arrays does not match layer sizes")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k} has shapes {W.shape}, {b.shape}")
        if self.activation != ACTIVATION:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def spatial_dim(self) -> int:
        return self.layer_sizes[0] - 1

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def with_flat(self, theta: np.ndarray) -> "MLP":
        weights, biases = _unflatten(self.layer_sizes, theta)
        return MLP(self.layer_sizes, weights, biases, self.activation, self.seed)

    def is_finite(self) -> bool:
        return all(np.isfinite(W).all() and np.isfinite(b).all()
                   for W, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class ParamGrad:
    """Gradient with the same per-layer shapes as the network it came from."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    @classmethod
    def from_flat(cls, layer_sizes: Sequence[int], g: np.ndarray) -> "ParamGrad":
        return cls(*_unflatten(layer_sizes, g))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) + np.sum(b * b)
                                 for w, b in zip(self.weights, self.biases))))

    def scaled(self, factor: float) -> "ParamGrad":
        return ParamGrad(tuple(w * factor for w in self.weights),
                         tuple(b * factor for b in self.biases))


@dataclass
class EvalBundle:
    """Network value and input derivatives at a batch of points.

    Fields that were not requested are ``None``.  The same container is
    used for cotangents (d loss / d field) when pulling gradients back.
    """

    u: np.ndarray
    du_dt: np.ndarray | None = None
    grad_x: np.ndarray | None = None  # shape (B, d)
    laplacian_x: np.ndarray | None = None

    def __len__(self):
        return len(self.u)


def _flatten(weights, biases) -> np.ndarray:
    parts = []
    for W, b in zip(weights, biases):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def _unflatten(layer_sizes, theta):
    theta = np.asarray(theta, dtype=np.float64)
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(theta[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
        pos += n_in * n_out
        biases.append(theta[pos:pos + n_out].copy())
        pos += n_out
    if pos != theta.size:
        raise ValueError(f"expected {pos} parameters, got {theta.size}")
    return tuple(weights), tuple(biases)


def init_mlp(layer_sizes: Sequence[int], seed: int) -> MLP:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MLP(tuple(sizes), tuple(weights), tuple(biases), seed=seed)


def _as_inputs(mlp: MLP, x, t):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if mlp.spatial_dim == 1 else x.reshape(1, -1)
    if x.shape[1] != mlp.spatial_dim:
        raise ValueError(f"points have {x.shape[1]} spatial components, "
                         f"network expects {mlp.spatial_dim}")
    if x.shape[0] != t.shape[0]:
        raise ValueError("x and t batch lengths differ")
    return x, t


def forward(mlp: MLP, x, t) -> np.ndarray:
    """Network output at each point.  ``x`` is (B, d) (or (B,) when d == 1)."""
    x, t = _as_inputs(mlp, x, t)
    h = np.concatenate([x, t[:, None]], axis=1)
    last = len(mlp.weights) - 1
    for k, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ W.T + b
        if k < last:
            h = np.tanh(h)
    return h[:, 0]


class _Trace:
    """Forward pass with derivative channels, kept for the reverse pass."""

    def __init__(self, mlp: MLP, x: np.ndarray, t: np.ndarray, order: int):
        self.mlp = mlp
        self.order = order
        d = mlp.spatial_dim
        n_in = d + 1
        batch = t.shape[0]
        self.d = d
        self.n_in = n_in
        self.z = np.concatenate([x, t[:, None]], axis=1)
        self.acts = []
        self.inputs = [None]
        weights, biases = mlp.weights, mlp.biases
        last = len(weights) - 1
        # First layer: derivative channels of the input are unit vectors, so
        # their pre-activations are just columns of W.
        W0 = weights[0]
        width = W0.shape[0]
        n_ch = 1 + (n_in if order >= 1 else 0) + (d if order >= 2 else 0)
        A = np.zeros((n_ch, batch, width))
        A[0] = self.z @ W0.T + biases[0]
        if order >= 1:
            A[1:1 + n_in] = W0.T[:, None, :]
        for k in range(len(weights)):
            if k > 0:
                S_in = S
                self.inputs.append(S_in)
                W = weights[k]
                A = (S_in.reshape(-1, S_in.shape[2]) @ W.T).reshape(n_ch, batch, W.shape[0])
                A[0] += biases[k]
            if k == last:
                S = A
                break
            h = np.tanh(A[0])
            s1 = 1.0 - h * h
            out = np.empty_like(A)
            out[0] = h
            if order >= 1:
                np.multiply(A[1:1 + n_in], s1, out=out[1:1 + n_in])
            if order >= 2:
                s2 = -2.0 * h * s1
                out[1 + n_in:] = s2 * A[1:1 + d] ** 2 + s1 * A[1 + n_in:]
            self.acts.append((A, h, s1))
            S = out
        self.out = S[:, :, 0]

    def bundle(self) -> EvalBundle:
        d, o = self.d, self.out
        b = EvalBundle(u=o[0].copy())
        if self.order >= 1:
            b.grad_x = o[1:1 + d].T.copy()
            b.du_dt = o[1 + d].copy()
        if self.order >= 2:
            b.laplacian_x = o[2 + d:].sum(axis=0)
        return b

    def pullback(self, cot: EvalBundle) -> ParamGrad:
        d, n_in = self.d, self.n_in
        batch = self.out.shape[1]
        G = np.zeros((self.out.shape[0], batch, 1))
        G[0, :, 0] = cot.u if cot.u is not None else 0.0
        if cot.grad_x is not None or cot.du_dt is not None:
            if self.order < 1:
                raise ValueError("first-derivative cotangent needs order >= 1")
            if cot.grad_x is not None:
                G[1:1 + d, :, 0] = np.asarray(cot.grad_x).T
            if cot.du_dt is not None:
                G[1 + d, :, 0] = cot.du_dt
        if cot.laplacian_x is not None:
            if self.order < 2:
                raise ValueError("laplacian cotangent needs order >= 2")
            G[2 + d:, :, 0] = cot.laplacian_x

        weights = self.mlp.weights
        n_layers = len(weights)
        dW = [None] * n_layers
        db = [None] * n_layers
        for k in range(n_layers - 1, -1, -1):
            if k < n_layers - 1:
                A, h, s1 = self.acts[k]
                GA = np.empty_like(G)
                s1bar = np.zeros_like(h)
                if self.order >= 1:
                    GA[1:1 + n_in] = G[1:1 + n_in] * s1
                    s1bar += np.einsum("cbm,cbm->bm", G[1:1 + n_in], A[1:1 + n_in])
                hbar = G[0].copy()
                if self.order >= 2:
                    s2 = -2.0 * h * s1
                    G2 = G[1 + n_in:]
                    GA[1:1 + d] += 2.0 * G2 * s2 * A[1:1 + d]
                    GA[1 + n_in:] = G2 * s1
                    s1bar += np.einsum("cbm,cbm->bm", G2, A[1 + n_in:])
                    s2bar = np.einsum("cbm,cbm->bm", G2, A[1:1 + d] ** 2)
                    hbar += s2bar * (6.0 * h * h - 2.0)
                hbar -= 2.0 * h * s1bar
                GA[0] = hbar * s1
                G = GA
            m, n = weights[k].shape
            if k > 0:
                S_in = self.inputs[k]
                dW[k] = G.reshape(-1, m).T @ S_in.reshape(-1, n)
            else:
                dW[k] = G[0].T @ self.z
                if self.order >= 1:
                    dW[k] += G[1:1 + n_in].sum(axis=1).T
            db[k] = G[0].sum(axis=0)
            if k > 0:
                G = (G.reshape(-1, m) @ weights[k]).reshape(G.shape[0], G.shape[1], n)
        return ParamGrad(tuple(dW), tuple(db))


def eval_with_input_derivs(mlp: MLP, x, t, order: int = 2) -> EvalBundle:
    """Value, time derivative, spatial gradient and spatial Laplacian.

    ``order`` limits the work: 0 gives only ``u``, 1 adds first
    derivatives, 2 adds the Laplacian.
    """
    x, t = _as_inputs(mlp, x, t)
    return _Trace(mlp, x, t, order).bundle()


def eval_vjp(mlp: MLP, x, t, order: int = 2):
    """Return ``(bundle, pullback)``; ``pullback(cotangent_bundle) -> ParamGrad``."""
    x, t = _as_inputs(mlp, x, t)
    trace = _Trace(mlp, x, t, order)
    return trace.bundle(), trace.pullback


@dataclass
class LossTerm:
    """One additive piece of a loss evaluated on its own point batch.

    ``fn(bundle)`` returns ``(value, cotangent)`` where the cotangent bundle
    holds d value / d field for each field of ``bundle`` used by the term.
    """

    x: np.ndarray
    t: np.ndarray
    order: int
    fn: Callable[[EvalBundle], tuple[float, EvalBundle]]
    name: str = ""


def loss_param_gradient(mlp: MLP, terms: Sequence[LossTerm]):
    """Total loss over ``terms`` and its exact parameter gradient.

    Returns ``(loss, grad, parts)`` where ``parts`` maps term names to
    their values.
    """
    total = 0.0
    flat = None
    parts = {}
    for term in terms:
        bundle, pullback = eval_vjp(mlp, term.x, term.t, term.order)
        value, cot = term.fn(bundle)
        value = float(value)
        parts[term.name] = value
        total += value
        g = pullback(cot).flat()
        flat = g if flat is None else flat + g
    if flat is None:
        flat = np.zeros(mlp.n_params)
    if not np.isfinite(total) or not np.isfinite(flat).all():
        raise NonFiniteLossError(f"non-finite loss {total!r}")
    return total, ParamGrad.from_flat(mlp.layer_sizes, flat), parts


# Checkpoint file layout (all integers little-endian):
#   8 bytes   magic b"PINNCKPT"
#   4 bytes   uint32 format version
#   8 bytes   uint64 header length H
#   H bytes   UTF-8 JSON header: layer_sizes, activation, seed, n_params, metadata
#   8*n bytes float64 little-endian parameters, layer by layer (W row-major, then b)
CHECKPOINT_MAGIC = b"PINNCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(mlp: MLP, path, metadata: dict | None = None) -> None:
    header = json.dumps({
        "layer_sizes": list(mlp.layer_sizes),
        "activation": mlp.activation,
        "seed": mlp.seed,
        "n_params": mlp.n_params,
        "metadata": metadata or {},
    }, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(mlp.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[MLP, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if theta.size != header["n_params"]:
        raise ValueError("truncated checkpoint")
    weights, biases = _unflatten(header["layer_sizes"], theta)
    mlp = MLP(tuple(header["layer_sizes"]), weights, biases,
              header["activation"], header["seed"])
    return mlp, header["metadata"]
