"""Small feedforward networks with hand-written reverse and forward mode.

Parameters live in a single flat float64 vector; :class:`MlpSpec` knows how
to slice it into per-layer ``(W, b)`` blocks. Hidden layers use tanh, the
output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: tuple[int, ...] = ()
    output_dim: int = 1
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        dims = (self.input_dim, *self.hidden_sizes, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[i + 1], d[i]) for i in range(len(d) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + (o if self.use_bias else 0) for o, i in self.layer_shapes)

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Split a flat vector into ``(W, b)`` views (``b`` is None without bias)."""
        params = np.asarray(params)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        layers = []
        k = 0
        for o, i in self.layer_shapes:
            W = params[k:k + o * i].reshape(o, i)
            k += o * i
            b = None
            if self.use_bias:
                b = params[k:k + o]
                k += o
            layers.append((W, b))
        return layers

    def pack(self, layers) -> np.ndarray:
        parts = []
        for W, b in layers:
            parts.append(np.ravel(W))
            if self.use_bias:
                parts.append(np.ravel(b))
        return np.concatenate(parts).astype(np.float64)

    def init_params(self, rng: np.random.Generator, output_scale: float = 1.0) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer; last layer scaled."""
        layers = []
        shapes = self.layer_shapes
        for n, (o, i) in enumerate(shapes):
            a = 1.0 / np.sqrt(i)
            scale = output_scale if n == len(shapes) - 1 else 1.0
            W = rng.uniform(-a, a, size=(o, i)) * scale
            b = rng.uniform(-a, a, size=o) * scale if self.use_bias else None
            layers.append((W, b))
        return self.pack(layers)


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input must have trailing dimension {spec.input_dim}, got shape {x.shape}")
    return X, single


def _activations(spec, layers, X):
    acts = [X]
    h = X
    for n, (W, b) in enumerate(layers):
        z = h @ W.T
        if b is not None:
            z = z + b
        h = z if n == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return acts


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    """Evaluate the network on one input ``(input_dim,)`` or a batch ``(N, input_dim)``."""
    X, single = _as_batch(spec, x)
    out = _activations(spec, spec.unpack(params), X)[-1]
    return out[0] if single else out


def _backward(spec, layers, acts, C):
    grads = []
    delta = C
    for n in range(len(layers) - 1, -1, -1):
        W, b = layers[n]
        grads.append((delta.T @ acts[n], delta.sum(axis=0) if b is not None else None))
        if n > 0:
            delta = (delta @ W) * (1.0 - acts[n] ** 2)
    return spec.pack(grads[::-1])


def _check_cotangent(spec, C, n_rows, single):
    C = np.asarray(C, dtype=np.float64)
    if single:
        C = C[None, :] if C.ndim == 1 else C
    if C.shape != (n_rows, spec.output_dim):
        raise ValueError(f"cotangent must have shape ({n_rows}, {spec.output_dim}), got {C.shape}")
    return C


def grad_params(spec: MlpSpec, params: np.ndarray, x, output_cotangent) -> np.ndarray:
    """Gradient of ``sum(cotangent * forward(x))`` w.r.t. the parameters.

    For batched input the cotangent has one row per input and gradients are
    summed over the batch.
    """
    X, single = _as_batch(spec, x)
    C = _check_cotangent(spec, output_cotangent, X.shape[0], single)
    layers = spec.unpack(params)
    acts = _activations(spec, layers, X)
    return _backward(spec, layers, acts, C)


def jacobian_vector_products(spec: MlpSpec, params: np.ndarray, x):
    """Return ``(jvp, vjp)`` closures for the output-by-parameter Jacobian.

    ``jvp(d)`` pushes a parameter-space direction forward to output tangents
    (one row per input); ``vjp(c)`` pulls output cotangents back to a flat
    parameter vector. Activations are computed once and shared.
    """
    X, single = _as_batch(spec, x)
    layers = spec.unpack(params)
    acts = _activations(spec, layers, X)
    n_rows = X.shape[0]

    def jvp(direction):
        dlayers = spec.unpack(np.asarray(direction, dtype=np.float64))
        dh = np.zeros_like(X)
        for n, ((W, b), (dW, db)) in enumerate(zip(layers, dlayers)):
            dz = acts[n] @ dW.T + dh @ W.T
            if db is not None:
                dz = dz + db
            dh = dz if n == len(layers) - 1 else dz * (1.0 - acts[n + 1] ** 2)
        return dh[0] if single else dh

    def vjp(cotangent):
        C = _check_cotangent(spec, cotangent, n_rows, single)
        return _backward(spec, layers, acts, C)

    return jvp, vjp


def save_checkpoint(path, kind: str, spec: MlpSpec, params: np.ndarray) -> None:
    """Write a text checkpoint: a short header then one value per line.

    ``params`` may be longer than ``spec.n_params`` (e.g. a Gaussian policy
    appends its log-std vector); ``count`` records the full length.
    """
    params = np.asarray(params, dtype=np.float64)
    lines = [
        "gaepg-checkpoint 1",
        f"kind {kind}",
        f"input_dim {spec.input_dim}",
        "hidden_sizes " + " ".join(str(h) for h in spec.hidden_sizes),
        f"output_dim {spec.output_dim}",
        f"use_bias {int(spec.use_bias)}",
        f"count {params.size}",
    ]
    lines += [repr(float(v)) for v in params]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[str, MlpSpec, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split() != ["gaepg-checkpoint", "1"]:
        raise ValueError(f"{path}: not a gaepg checkpoint")
    header = {}
    for line in lines[1:7]:
        key, _, rest = line.partition(" ")
        header[key] = rest.strip()
    spec = MlpSpec(
        input_dim=int(header["input_dim"]),
        hidden_sizes=tuple(int(h) for h in header["hidden_sizes"].split()),
        output_dim=int(header["output_dim"]),
        use_bias=bool(int(header["use_bias"])),
    )
    count = int(header["count"])
    values = np.array([float(v) for v in lines[7:7 + count]], dtype=np.float64)
    if values.size != count:
        raise ValueError(f"{path}: expected {count} values, found {values.size}")
    return header["kind"], spec, values
