"""
Dataset bookkeeping: train/validation/test splits, global scaling, client shards
and the fixed-layout binary files they are stored in.

Dataset file (little-endian)::

    magic "KSDS" | version u16 | reserved u16
    3 x (rows u64 | cols u64 | rows*cols f64, row-major)   train, validation, test
    scaler mean f64 | scaler std f64

Field file (same block layout, one block, no scaler)::

    magic "KSEF" | version u16 | reserved u16 | rows u64 | cols u64 | data
"""
import struct
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from .errors import DegenerateDataError, FormatError
from .kssolver import Trajectory
from .log import get_logger
from .types import *
from .utils import *

logger = get_logger(__name__)

DATASET_MAGIC = b"KSDS"
FIELD_MAGIC = b"KSEF"
FORMAT_VERSION = 1

_PREAMBLE = struct.Struct("<4sHH")
_BLOCK_HEADER = struct.Struct("<QQ")
_SCALER = struct.Struct("<dd")

#: std below this is treated as constant data
MIN_STD = 1e-12


@dataclass(frozen=True)
class Scaler:
    """Single global mean/std, fitted on the training split only."""
    mean: float
    std: float

    def apply(self, X: np.ndarray) -> np.ndarray:
        return apply(self, X)

    def invert(self, X_scaled: np.ndarray) -> np.ndarray:
        return invert(self, X_scaled)


@dataclass
class DatasetSplits:
    train: SnapshotMatrix
    validation: SnapshotMatrix
    test: SnapshotMatrix
    scaler: Scaler

    def scaled(self) -> "DatasetSplits":
        """Copy with every split standardized by `scaler`."""
        return DatasetSplits(
            train=apply(self.scaler, self.train),
            validation=apply(self.scaler, self.validation),
            test=apply(self.scaler, self.test),
            scaler=self.scaler,
        )


@dataclass
class ClientShard:
    """Local dataset P_k of client `client_id`; `n_k` is its row count."""
    client_id: int
    data: SnapshotMatrix

    @property
    def n_k(self) -> int:
        return int(self.data.shape[0])


def split(traj: Union[Trajectory, np.ndarray], train_fraction: float = 0.8) -> Tuple[SnapshotMatrix, SnapshotMatrix]:
    """
    Temporal-prefix split into (train, validation).

    The first floor(train_fraction * M) samples go to train, the rest to validation.

    Parameters
    ----------
    traj : Trajectory or np.ndarray
        Time-ordered samples.
    train_fraction : float, optional
        Share of samples used for training, 0 < fraction <= 1. Defaults to 0.8.

    Returns
    -------
    tuple of np.ndarray
        (train, validation); validation may have zero rows.

    Raises
    ------
    ValueError
        If the trajectory is empty or the fraction is out of range.

    Examples
    --------
    >>> train, val = split(np.zeros((10000, 64)), 0.8)
    >>> train.shape[0], val.shape[0]
    (8000, 2000)
    """
    X = traj.snapshots if isinstance(traj, Trajectory) else traj
    X = as_matrix(X, "traj", allow_empty=True)
    if X.shape[0] == 0:
        raise ValueError("`traj` should contain at least one sample.")
    if not isinstance(train_fraction, (int, float)) or not 0.0 < train_fraction <= 1.0:
        raise ValueError("`train_fraction` should be in (0, 1].")
    n_train = int(np.floor(train_fraction * X.shape[0]))
    return X[:n_train].copy(), X[n_train:].copy()


def partition(train: SnapshotMatrix, K: int, scheme: PartitionScheme = 'contiguous', seed: int = 0) -> List[ClientShard]:
    """
    Split the training rows into `K` disjoint client shards.

    Shard sizes differ by at most one. ``contiguous`` hands out consecutive
    temporal blocks, ``strided`` deals rows round-robin (row i goes to client
    i mod K), ``shuffled`` deals a seeded random permutation in blocks.

    Raises
    ------
    ValueError
        If `K` < 1, `K` exceeds the row count, or `scheme` is unknown.
    """
    X = as_matrix(train, "train")
    K = check_positive_int(K, "K")
    scheme = check_option(scheme, VALID_PARTITION_SCHEMES, "scheme")
    if K > X.shape[0]:
        raise ValueError(f"`K` ({K}) should not exceed the number of training rows ({X.shape[0]}).")

    rows = np.arange(X.shape[0])
    if scheme == 'contiguous':
        groups = np.array_split(rows, K)
    elif scheme == 'strided':
        groups = [rows[k::K] for k in range(K)]
    else:
        groups = np.array_split(np.random.default_rng(seed).permutation(rows), K)

    return [ClientShard(client_id=k, data=X[np.sort(idx)].copy()) for k, idx in enumerate(groups)]


def fit_scaler(train: SnapshotMatrix) -> Scaler:
    """
    Fit a global scalar mean/std over every entry of `train`.

    Raises
    ------
    DegenerateDataError
        If the data is constant (std < 1e-12).
    """
    X = as_matrix(train, "train")
    mean = float(np.mean(X))
    std = float(np.std(X))
    if std < MIN_STD:
        raise DegenerateDataError(f"Training data is constant (std={std:.3e}); cannot scale.")
    return Scaler(mean=mean, std=std)


def apply(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    """(x - mean) / std elementwise."""
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


def invert(scaler: Scaler, X_scaled: np.ndarray) -> np.ndarray:
    """x' * std + mean elementwise."""
    return np.asarray(X_scaled, dtype=np.float64) * scaler.std + scaler.mean


def build_splits(production: Union[Trajectory, np.ndarray], test: Union[Trajectory, np.ndarray], train_fraction: float = 0.8) -> DatasetSplits:
    """
    Train/validation from the production run, test from the later segment, scaler
    fitted on train.
    """
    train, validation = split(production, train_fraction)
    test_X = test.snapshots if isinstance(test, Trajectory) else test
    return DatasetSplits(train=train, validation=validation, test=as_matrix(test_X, "test").copy(), scaler=fit_scaler(train))


def _encode_block(X: np.ndarray) -> bytes:
    X = np.ascontiguousarray(X, dtype='<f8')
    rows, cols = X.shape if X.ndim == 2 else (0, 0)
    return _BLOCK_HEADER.pack(rows, cols) + X.tobytes()


def _decode_block(data: bytes, offset: int) -> Tuple[np.ndarray, int]:
    if len(data) < offset + _BLOCK_HEADER.size:
        raise FormatError("Truncated block header", offset)
    rows, cols = _BLOCK_HEADER.unpack_from(data, offset)
    offset += _BLOCK_HEADER.size
    nbytes = 8 * rows * cols
    if len(data) < offset + nbytes:
        raise FormatError(f"Truncated block payload: expected {nbytes} bytes, found {len(data) - offset}", offset)
    if rows * cols == 0:
        return np.zeros((rows, cols)), offset
    X = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols).astype(np.float64)
    return X, offset + nbytes


def _decode_preamble(data: bytes, magic: bytes) -> int:
    if len(data) < _PREAMBLE.size:
        raise FormatError("Truncated header", len(data))
    found, version, _ = _PREAMBLE.unpack_from(data, 0)
    if found != magic:
        raise FormatError(f"Bad magic {found!r}, expected {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported version {version}, expected {FORMAT_VERSION}", 4)
    return _PREAMBLE.size


def encode_dataset(splits: DatasetSplits) -> bytes:
    parts = [_PREAMBLE.pack(DATASET_MAGIC, FORMAT_VERSION, 0)]
    for X in (splits.train, splits.validation, splits.test):
        parts.append(_encode_block(as_matrix(X, "splits", allow_empty=True)))
    parts.append(_SCALER.pack(splits.scaler.mean, splits.scaler.std))
    return b"".join(parts)


def decode_dataset(data: bytes) -> DatasetSplits:
    offset = _decode_preamble(data, DATASET_MAGIC)
    blocks = []
    for _ in range(3):
        X, offset = _decode_block(data, offset)
        blocks.append(X)
    if len(data) < offset + _SCALER.size:
        raise FormatError("Truncated scaler record", offset)
    mean, std = _SCALER.unpack_from(data, offset)
    if not (np.isfinite(mean) and np.isfinite(std) and std > 0.0):
        raise FormatError(f"Invalid scaler record (mean {mean}, std {std})", offset)
    offset += _SCALER.size
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset)
    return DatasetSplits(train=blocks[0], validation=blocks[1], test=blocks[2], scaler=Scaler(mean=mean, std=std))


def save_dataset(path: str, splits: DatasetSplits) -> None:
    """
    Write `splits` to `path` in the KSDS layout.

    Examples
    --------
    >>> save_dataset('runs/dataset.ksds', splits)
    """
    if not isinstance(path, str):
        raise TypeError("`path` must be a string.")
    with open(path, 'wb') as file:
        file.write(encode_dataset(splits))
    logger.info("wrote dataset %s (train %d, validation %d, test %d)", path, len(splits.train), len(splits.validation), len(splits.test))


def load_dataset(path: str) -> DatasetSplits:
    """
    Read a KSDS file.

    Raises
    ------
    FileNotFoundError
        If `path` does not exist.
    FormatError
        On bad magic, version mismatch or truncation; carries the byte offset.
    """
    check_file_existence(path)
    with open(path, 'rb') as file:
        return decode_dataset(file.read())


def save_field(path: str, X: np.ndarray) -> None:
    """Write a single matrix (error field, transient) in the KSEF layout."""
    X = as_matrix(X, "X", allow_empty=True)
    with open(path, 'wb') as file:
        file.write(_PREAMBLE.pack(FIELD_MAGIC, FORMAT_VERSION, 0) + _encode_block(X))


def load_field(path: str) -> np.ndarray:
    check_file_existence(path)
    with open(path, 'rb') as file:
        data = file.read()
    offset = _decode_preamble(data, FIELD_MAGIC)
    X, offset = _decode_block(data, offset)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset)
    return X
