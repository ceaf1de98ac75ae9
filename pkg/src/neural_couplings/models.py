"""The three shallow separation models and their analytic gradients.

Every layer is a square linear map followed by ReLU. The plain denoising
autoencoder (dae) is encoder + decoder; the deeper variant (mss-dae) inserts
extra hidden layers between them; the skip-filtering model (sf) multiplies
its decoder output element-wise with the input, so the decoder learns a mask
rather than the spectra themselves.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serial
from .linalg import Mat, ShapeError, glorot_like_init, relu, relu_deriv

CHECKPOINT_MAGIC = b"NCM1"
CHECKPOINT_VERSION = 1

ARCH_TAGS = ("dae", "mss-dae", "sf")
_ARCH_BYTE = {"dae": 0, "mss-dae": 1, "sf": 2}
_BYTE_ARCH = {v: k for k, v in _ARCH_BYTE.items()}


@dataclass(frozen=True)
class Arch:
    """Architecture tag plus hidden-layer count (only mss-dae has hidden layers)."""

    tag: str
    hidden_layers: int = 0

    def __post_init__(self):
        if self.tag not in ARCH_TAGS:
            raise ValueError(f"unknown architecture tag {self.tag!r}")
        if self.tag in ("dae", "sf") and self.hidden_layers != 0:
            raise ValueError(f"{self.tag} takes no hidden layers")
        if self.tag == "mss-dae" and self.hidden_layers < 1:
            raise ValueError("mss-dae needs at least one hidden layer")

    @property
    def n_layers(self) -> int:
        return 2 + self.hidden_layers

    @property
    def uses_mask(self) -> bool:
        return self.tag == "sf"

    @classmethod
    def dae(cls) -> "Arch":
        return cls("dae")

    @classmethod
    def mss_dae(cls, hidden_layers: int = 2) -> "Arch":
        return cls("mss-dae", hidden_layers)

    @classmethod
    def sf(cls) -> "Arch":
        return cls("sf")


@dataclass
class ModelParams:
    """Per-layer (W, b) with every W square n x n and every b an n x 1 column."""

    arch: Arch
    layers: list[tuple[Mat, Mat]]
    n: int

    def __post_init__(self):
        if len(self.layers) != self.arch.n_layers:
            raise ValueError(
                f"{self.arch.tag} wants {self.arch.n_layers} layers, got {len(self.layers)}"
            )
        for i, (w, b) in enumerate(self.layers):
            if w.shape != (self.n, self.n):
                raise ShapeError(f"layer {i}: W has shape {w.shape}, expected {(self.n, self.n)}")
            if b.shape != (self.n, 1):
                raise ShapeError(f"layer {i}: b has shape {b.shape}, expected {(self.n, 1)}")


@dataclass
class ForwardTrace:
    """Activations retained for backprop: per-layer pre/post ReLU, the final
    estimate, and (sf only) the mask."""

    x_input: Mat
    pre: list[Mat]
    post: list[Mat]
    output: Mat
    mask: Mat | None = None

    @property
    def decoder_output(self) -> Mat:
        """Last-layer ReLU output: the spectral estimate, or the mask for sf."""
        return self.post[-1]


@dataclass
class Checkpoint:
    params: ModelParams
    seed: int
    epochs: int


def init_params(arch: Arch, n: int, rng: np.random.Generator) -> ModelParams:
    """Weights drawn normal * sqrt(1/n) in layer order, biases zero."""
    layers = [
        (glorot_like_init(rng, n, n, n), np.zeros((n, 1))) for _ in range(arch.n_layers)
    ]
    return ModelParams(arch, layers, n)


def forward(params: ModelParams, x_batch) -> ForwardTrace:
    """Run the model on a batch of column frames (n x T)."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != params.n:
        raise ShapeError(f"input batch has shape {x.shape}, expected ({params.n}, T)")
    if not np.isfinite(x).all():
        raise ValueError("forward: non-finite values in input batch")
    a = x
    pre: list[Mat] = []
    post: list[Mat] = []
    for w, b in params.layers:
        z = w @ a + b
        a = relu(z)
        pre.append(z)
        post.append(a)
    if params.arch.uses_mask:
        return ForwardTrace(x, pre, post, post[-1] * x, mask=post[-1])
    return ForwardTrace(x, pre, post, post[-1])


def mse(x_batch, xhat_batch) -> float:
    """Mean over the batch of the per-column (1/n)*||x - xhat||^2."""
    x = np.asarray(x_batch, dtype=np.float64)
    xh = np.asarray(xhat_batch, dtype=np.float64)
    if x.shape != xh.shape:
        raise ShapeError(f"mse: shapes {x.shape} and {xh.shape} differ")
    d = x - xh
    return float(np.mean(d * d))


def backward(params: ModelParams, trace: ForwardTrace, x_target) -> list[tuple[Mat, Mat]]:
    """Analytic MSE gradients for every layer, in layer order.

    For sf the loss gradient reaches the decoder through the masking product,
    so it is weighted by the input before entering the ReLU chain.
    """
    if len(trace.pre) != len(params.layers):
        raise ValueError(
            f"trace has {len(trace.pre)} layers, params have {len(params.layers)}"
        )
    tgt = np.asarray(x_target, dtype=np.float64)
    if tgt.shape != trace.output.shape:
        raise ShapeError(f"target shape {tgt.shape} differs from output {trace.output.shape}")
    n, t = trace.output.shape
    d_out = (2.0 / (n * t)) * (trace.output - tgt)
    d_post = d_out * trace.x_input if params.arch.uses_mask else d_out

    grads: list[tuple[Mat, Mat] | None] = [None] * len(params.layers)
    for layer in reversed(range(len(params.layers))):
        d_pre = d_post * relu_deriv(trace.pre[layer])
        a_prev = trace.post[layer - 1] if layer > 0 else trace.x_input
        grads[layer] = (d_pre @ a_prev.T, d_pre.sum(axis=1, keepdims=True))
        if layer > 0:
            d_post = params.layers[layer][0].T @ d_pre
    return grads  # type: ignore[return-value]


def save_checkpoint(path: str | Path, params: ModelParams, seed: int, epochs: int) -> None:
    for i, (w, b) in enumerate(params.layers):
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError(f"refusing to save checkpoint: layer {i} has non-finite values")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    serial.write_u32(buf, CHECKPOINT_VERSION)
    serial.write_u8(buf, _ARCH_BYTE[params.arch.tag])
    serial.write_u32(buf, params.n)
    serial.write_u32(buf, len(params.layers))
    for w, b in params.layers:
        serial.write_mat(buf, w)
        serial.write_mat(buf, b)
    serial.write_u64(buf, seed)
    serial.write_u32(buf, epochs)
    serial.write_file_atomic(path, buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        serial.expect_magic(f, CHECKPOINT_MAGIC)
        serial.read_version(f, CHECKPOINT_VERSION)
        tag_byte = serial.read_u8(f)
        if tag_byte not in _BYTE_ARCH:
            raise serial.FormatError(f"unknown architecture byte {tag_byte}")
        tag = _BYTE_ARCH[tag_byte]
        n = serial.read_u32(f)
        n_layers = serial.read_u32(f)
        layers = [(serial.read_mat(f), serial.read_mat(f)) for _ in range(n_layers)]
        seed = serial.read_u64(f)
        epochs = serial.read_u32(f)
    if tag == "mss-dae":
        arch = Arch.mss_dae(n_layers - 2) if n_layers >= 3 else None
    else:
        arch = Arch(tag) if n_layers == 2 else None
    if arch is None:
        raise serial.FormatError(f"{tag} checkpoint with {n_layers} layers is malformed")
    try:
        return Checkpoint(ModelParams(arch, layers, n), seed, epochs)
    except (ValueError, ShapeError) as e:
        raise serial.FormatError(f"invalid stored checkpoint: {e}") from None
