"""
Dense autoencoder with exact backpropagation.

The encoder maps R^N to an R-dimensional latent space and the decoder mirrors it
back. Parameters live in one flat float64 vector so they can be averaged, sent over
the wire and checkpointed without any per-layer bookkeeping; `ModelParams.layers`
gives per-layer (W, b) views into that vector.

Checkpoint block (little-endian)::

    magic "FWTS" | version u16 | layer count u16
    per layer: fan_in u32 | fan_out u32
    all W (row-major, fan_in x fan_out) and b, layer by layer, f64
    CRC32 u32 of every preceding byte
"""
import struct
import zlib
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, NumericalError
from .log import get_logger
from .types import *
from .utils import *

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b"FWTS"
CHECKPOINT_VERSION = 1

_CKPT_HEADER = struct.Struct("<4sHH")
_CKPT_LAYER = struct.Struct("<II")
_CRC = struct.Struct("<I")


def _tanh(z):
    return np.tanh(z)

def _tanh_grad(a):
    return 1.0 - a * a

def _identity(z):
    return z

def _identity_grad(a):
    return np.ones_like(a)

#: activation name -> (function, derivative written in terms of the output)
ACTIVATIONS = {
    'tanh': (_tanh, _tanh_grad),
    'identity': (_identity, _identity_grad),
}


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Encoder input_dim -> hidden_dims -> latent_dim, decoder mirrored back.

    The default is 64 -> 32 -> 16 -> 8 -> 16 -> 32 -> 64 with tanh hidden layers,
    a linear latent layer and a linear output.
    """
    input_dim: int = 64
    latent_dim: int = 8
    hidden_dims: Tuple[int, ...] = (32, 16)
    hidden_activation: Activation = 'tanh'
    latent_activation: Activation = 'identity'
    output_activation: Activation = 'identity'

    def validate(self) -> "ArchitectureSpec":
        check_positive_int(self.input_dim, "input_dim")
        check_positive_int(self.latent_dim, "latent_dim")
        if self.latent_dim >= self.input_dim:
            raise ValueError("`latent_dim` should be smaller than `input_dim`.")
        if not all(isinstance(h, (int, np.integer)) and h > 0 for h in self.hidden_dims):
            raise ValueError("All `hidden_dims` should be positive integers.")
        for name in ('hidden_activation', 'latent_activation', 'output_activation'):
            check_option(getattr(self, name), VALID_ACTIVATIONS, name)
        return self

    def layer_shapes(self) -> LayerShapes:
        dims = [self.input_dim, *self.hidden_dims, self.latent_dim, *reversed(self.hidden_dims), self.input_dim]
        return tuple((int(dims[i]), int(dims[i + 1])) for i in range(len(dims) - 1))

    def activations(self) -> List[str]:
        n_hidden = len(self.hidden_dims)
        encoder = [self.hidden_activation] * n_hidden + [self.latent_activation]
        decoder = [self.hidden_activation] * n_hidden + [self.output_activation]
        return [a.lower() for a in encoder + decoder]

    def parameter_count(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes())

    @classmethod
    def from_shapes(cls, shapes: Sequence[Tuple[int, int]], **activations) -> "ArchitectureSpec":
        """Recover the architecture of a mirrored autoencoder from its layer table."""
        shapes = tuple(tuple(s) for s in shapes)
        n = len(shapes)
        if n < 2 or n % 2:
            raise ValueError("`shapes` should describe a mirrored encoder/decoder (even layer count).")
        hidden = tuple(out for _, out in shapes[: n // 2 - 1])
        spec = cls(input_dim=shapes[0][0], latent_dim=shapes[n // 2 - 1][1], hidden_dims=hidden, **activations)
        if spec.layer_shapes() != shapes:
            raise ValueError(f"`shapes` {shapes} is not a mirrored autoencoder.")
        return spec


@dataclass
class ModelParams:
    """Flat parameter vector w plus the (fan_in, fan_out) table that lays it out."""
    values: np.ndarray
    shapes: LayerShapes

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.shapes = tuple((int(i), int(o)) for i, o in self.shapes)
        expected = sum(i * o + o for i, o in self.shapes)
        if self.values.shape != (expected,):
            raise ValueError(f"`values` should have length {expected} for shapes {self.shapes}, got {self.values.shape}.")

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(W, b) views per layer; writing to them writes into `values`."""
        out = []
        offset = 0
        for n_in, n_out in self.shapes:
            W = self.values[offset: offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = self.values[offset: offset + n_out]
            offset += n_out
            out.append((W, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(values=self.values.copy(), shapes=self.shapes)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    @property
    def size(self) -> int:
        return int(self.values.size)


@dataclass
class ForwardCache:
    """Layer inputs/outputs kept by `forward` for `backward`."""
    shapes: LayerShapes
    activations: List[np.ndarray]
    names: List[str]


@dataclass
class OptimizerState:
    """
    Local optimizer state. Adam moments are zero-initialized and never leave the
    client that owns them.
    """
    kind: OptimizerKind = 'adam'
    learning_rate: float = 1e-3
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(spec: ArchitectureSpec, seed: int = 0) -> ModelParams:
    """
    Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.

    Examples
    --------
    >>> params = init_params(ArchitectureSpec(), seed=0)
    >>> params.size == ArchitectureSpec().parameter_count()
    True
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams(values=np.zeros(spec.parameter_count()), shapes=spec.layer_shapes())
    for W, _ in params.layers():
        n_in, n_out = W.shape
        bound = np.sqrt(6.0 / (n_in + n_out))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _check_layout(params: ModelParams, spec: ArchitectureSpec):
    if params.shapes != spec.layer_shapes():
        raise ValueError(f"`params` layout {params.shapes} does not match the architecture {spec.layer_shapes()}.")


def forward(params: ModelParams, spec: ArchitectureSpec, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Reconstruct `batch` (B x N) through encoder and decoder.

    Returns
    -------
    tuple
        (reconstruction B x N, ForwardCache for `backward`).

    Raises
    ------
    ValueError
        If the batch width or the parameter layout does not match `spec`.
    """
    _check_layout(params, spec)
    a = as_matrix(batch, "batch")
    if a.shape[1] != spec.input_dim:
        raise ValueError(f"`batch` should have {spec.input_dim} columns, got {a.shape[1]}.")
    names = spec.activations()
    activations = [a]
    for (W, b), name in zip(params.layers(), names):
        a = ACTIVATIONS[name][0](a @ W + b)
        activations.append(a)
    return a, ForwardCache(shapes=params.shapes, activations=activations, names=names)


def encode(params: ModelParams, spec: ArchitectureSpec, batch: np.ndarray) -> np.ndarray:
    """Latent coordinates (B x R) of `batch`."""
    _, cache = forward(params, spec, batch)
    return cache.activations[len(spec.hidden_dims) + 1]


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """
    Mean over batch and grid of the squared reconstruction error.

    Raises
    ------
    ValueError
        If the shapes differ.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"`pred` shape {pred.shape} does not match `target` shape {target.shape}.")
    return float(np.mean((pred - target) ** 2))


def backward(params: ModelParams, spec: ArchitectureSpec, cache: ForwardCache, target: np.ndarray) -> np.ndarray:
    """
    Exact gradient of loss_mse(forward(params, batch), target) w.r.t. the flat
    parameter vector, in the same layout as `params.values`.

    Raises
    ------
    ValueError
        If `cache` was produced for a different layout or `target` does not match
        the cached output.
    """
    _check_layout(params, spec)
    if cache.shapes != params.shapes:
        raise ValueError("`cache` was produced for a different parameter layout.")
    output = cache.activations[-1]
    target = np.asarray(target, dtype=np.float64)
    if target.shape != output.shape:
        raise ValueError(f"`target` shape {target.shape} does not match the cached output {output.shape}.")

    grad = ModelParams(values=np.zeros(params.size), shapes=params.shapes)
    layers = params.layers()
    grad_layers = grad.layers()

    d_out = 2.0 * (output - target) / output.size
    for i in reversed(range(len(layers))):
        W, _ = layers[i]
        gW, gb = grad_layers[i]
        delta = d_out * ACTIVATIONS[cache.names[i]][1](cache.activations[i + 1])
        gW[...] = cache.activations[i].T @ delta
        gb[...] = delta.sum(axis=0)
        d_out = delta @ W.T
    return grad.values


def loss_and_gradient(params: ModelParams, spec: ArchitectureSpec, batch: np.ndarray) -> Tuple[float, np.ndarray]:
    """Reconstruction loss of `batch` and its gradient."""
    pred, cache = forward(params, spec, batch)
    return loss_mse(pred, batch), backward(params, spec, cache, batch)


def evaluate_loss(params: ModelParams, spec: ArchitectureSpec, X: np.ndarray) -> float:
    """Reconstruction MSE of the whole matrix `X` (same units as `X`)."""
    pred, _ = forward(params, spec, X)
    return loss_mse(pred, X)


def autoencode(params: ModelParams, spec: ArchitectureSpec, X: np.ndarray) -> np.ndarray:
    """Reconstruction (eta o xi) of every row of `X`."""
    return forward(params, spec, X)[0]


def init_optimizer(kind: OptimizerKind = 'adam', learning_rate: float = 1e-3, **kwargs) -> OptimizerState:
    """
    Fresh optimizer state; moment vectors are allocated on the first step.

    Raises
    ------
    ValueError
        If `kind` is unknown or `learning_rate` is not positive.
    """
    kind = check_option(kind, VALID_OPTIMIZERS, "kind")
    check_positive(learning_rate, "learning_rate")
    return OptimizerState(kind=kind, learning_rate=float(learning_rate), **kwargs)


def optimizer_step(params: ModelParams, grad: np.ndarray, state: OptimizerState) -> Tuple[ModelParams, OptimizerState]:
    """
    One update of `params` along `grad`; returns new params and state.

    SGD: w <- w - alpha g. Adam: bias-corrected first/second moment update.

    Raises
    ------
    ValueError
        If `grad` does not match the parameter layout.
    NumericalError
        If `grad` contains non-finite values.

    Examples
    --------
    >>> w = ModelParams(np.array([1.0, 2.0]), ((1, 1),))
    >>> w2, _ = optimizer_step(w, np.array([0.5, -1.0]), init_optimizer('sgd', 0.1))
    >>> w2.values
    array([0.95, 2.1 ])
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError(f"`grad` shape {grad.shape} does not match the parameters {params.values.shape}.")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Non-finite gradient.")

    lr = state.learning_rate
    if state.kind == 'sgd':
        return ModelParams(values=params.values - lr * grad, shapes=params.shapes), replace(state, step=state.step + 1)

    m = np.zeros_like(grad) if state.m is None else state.m
    v = np.zeros_like(grad) if state.v is None else state.v
    step = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return ModelParams(values=values, shapes=params.shapes), replace(state, m=m, v=v, step=step)


def encode_params(params: ModelParams) -> bytes:
    """Serialize `params` as a checkpoint block (CRC32 trailer included)."""
    body = [_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params.shapes))]
    body.extend(_CKPT_LAYER.pack(n_in, n_out) for n_in, n_out in params.shapes)
    body.append(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
    payload = b"".join(body)
    return payload + _CRC.pack(zlib.crc32(payload))


def decode_params(data: bytes, offset: int = 0) -> Tuple[ModelParams, int]:
    """
    Parse a checkpoint block starting at `offset`.

    Returns
    -------
    tuple
        (ModelParams, offset just past the CRC trailer).

    Raises
    ------
    FormatError
        On bad magic, unsupported version, truncation or CRC mismatch.
    """
    start = offset
    if len(data) < offset + _CKPT_HEADER.size:
        raise FormatError("Truncated checkpoint header", offset)
    magic, version, n_layers = _CKPT_HEADER.unpack_from(data, offset)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"Bad checkpoint magic {magic!r}", offset)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", offset + 4)
    offset += _CKPT_HEADER.size

    if len(data) < offset + n_layers * _CKPT_LAYER.size:
        raise FormatError("Truncated layer table", offset)
    shapes = []
    for _ in range(n_layers):
        shapes.append(_CKPT_LAYER.unpack_from(data, offset))
        offset += _CKPT_LAYER.size

    count = sum(i * o + o for i, o in shapes)
    if len(data) < offset + 8 * count + _CRC.size:
        raise FormatError(f"Truncated parameter payload ({count} values expected)", offset)
    values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64) if count else np.zeros(0)
    offset += 8 * count

    (crc,) = _CRC.unpack_from(data, offset)
    if crc != zlib.crc32(data[start:offset]):
        raise FormatError("Checkpoint CRC mismatch", offset)
    offset += _CRC.size
    return ModelParams(values=values, shapes=tuple(shapes)), offset


def save_checkpoint(path: str, params: ModelParams) -> None:
    if not isinstance(path, str):
        raise TypeError("`path` must be a string.")
    with open(path, "wb") as file:
        file.write(encode_params(params))


def load_checkpoint(path: str) -> ModelParams:
    """
    Read a checkpoint file written by `save_checkpoint`.

    Raises
    ------
    FileNotFoundError
        If `path` does not exist.
    FormatError
        If the file is malformed or has trailing bytes.
    """
    check_file_existence(path)
    with open(path, "rb") as file:
        data = file.read()
    params, offset = decode_params(data)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after checkpoint", offset)
    return params
