"""
Federated averaging over K clients with synchronous rounds.

Server loop, per round t::

    for each selected client k:   w_{t+1}^k <- ClientUpdate(k, w_t)
    w_{t+1} <- sum_k (n_k / n) w_{t+1}^k

ClientUpdate runs E local epochs of minibatch (size B) optimizer steps on the
client's shard P_k. Only parameters cross the client boundary; optimizer state stays
with the client across rounds.

Clients are reached through a *pool* exposing ``client_ids`` and
``dispatch(w_t, round_index, client_ids) -> list[RoundUpdate]``; the in-process pool
lives here, the socket pool in `transport`.
"""
import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .datastore import ClientShard
from .errors import NumericalError, RoundError
from .log import get_logger
from .neuralnet import *
from .types import *
from .utils import *

logger = get_logger(__name__)


@dataclass(frozen=True)
class FedConfig:
    """
    Federated (and centralized) training settings.

    clients is K, local_epochs is E, batch_size is B, learning_rate is alpha and
    rounds is T. For centralized training `rounds` counts epochs and `clients`,
    `local_epochs` and `participation` are ignored.
    """
    clients: int = 10
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 1e-3
    rounds: int = 500
    optimizer: OptimizerKind = 'adam'
    seed: int = 0
    deterministic: bool = True
    participation: float = 1.0
    workers: int = 1

    def validate(self) -> "FedConfig":
        check_positive_int(self.clients, "clients")
        check_positive_int(self.local_epochs, "local_epochs", minimum=0)
        check_positive_int(self.batch_size, "batch_size")
        check_positive(self.learning_rate, "learning_rate")
        check_positive_int(self.rounds, "rounds")
        check_option(self.optimizer, VALID_OPTIMIZERS, "optimizer")
        check_positive_int(self.seed, "seed", minimum=0)
        if not isinstance(self.participation, (int, float)) or not 0.0 < self.participation <= 1.0:
            raise ValueError("`participation` should be in (0, 1].")
        check_positive_int(self.workers, "workers")
        return self


@dataclass
class RoundUpdate:
    """
    Result of one ClientUpdate. `optimizer_state` stays on the client side and is
    never serialized.
    """
    client_id: int
    params_local: ModelParams
    n_k: int
    local_train_loss: float
    steps: int = 0
    optimizer_state: Optional[OptimizerState] = None


@dataclass
class RoundMetrics:
    round_index: int
    train_loss: float
    val_loss: float
    wall_ms: float
    participants: Tuple[int, ...] = ()


@dataclass
class TrainingHistory:
    """Per-round (or per-epoch) records, contiguous from round 1."""
    records: List[RoundMetrics] = field(default_factory=list)

    def append(self, metrics: RoundMetrics) -> None:
        expected = len(self.records) + 1
        if metrics.round_index != expected:
            raise ValueError(f"Round {metrics.round_index} appended where round {expected} was expected.")
        self.records.append(metrics)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def val_losses(self) -> np.ndarray:
        return np.array([r.val_loss for r in self.records])

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    def write_csv(self, path: str, include_timing: bool = True) -> None:
        """
        Write ``round,train_loss,val_loss,wall_ms`` rows. Losses use 17 significant
        digits; with ``include_timing=False`` wall_ms is written as 0 so reruns are
        byte-identical.
        """
        with open(path, "w", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["round", "train_loss", "val_loss", "wall_ms"])
            for r in self.records:
                wall = f"{r.wall_ms:.3f}" if include_timing else "0"
                writer.writerow([r.round_index, f"{r.train_loss:.17g}", f"{r.val_loss:.17g}", wall])


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    """Shuffling stream for one client in one round, independent across clients."""
    return np.random.default_rng([int(seed), int(round_index), int(client_id)])


def run_local_epochs(
    params: ModelParams,
    state: OptimizerState,
    data: np.ndarray,
    spec: ArchitectureSpec,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> Tuple[ModelParams, OptimizerState, int]:
    """
    `epochs` passes of minibatch optimizer steps over `data`.

    Each epoch shuffles with `rng` and splits into ceil(n / batch_size) batches, the
    last possibly short. When one batch covers all rows the natural row order is
    kept, so a full-batch step does not depend on the shuffle.

    Returns
    -------
    tuple
        (params, optimizer state, number of optimizer steps).
    """
    n = data.shape[0]
    single_batch = batch_size >= n
    steps = 0
    for _ in range(epochs):
        order = np.arange(n) if single_batch else rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[order[start: start + batch_size]]
            _, grad = loss_and_gradient(params, spec, batch)
            params, state = optimizer_step(params, grad, state)
            steps += 1
    return params, state, steps


def client_update(
    w_global: ModelParams,
    shard: ClientShard,
    cfg: FedConfig,
    rng: np.random.Generator,
    spec: ArchitectureSpec,
    optimizer_state: Optional[OptimizerState] = None,
) -> RoundUpdate:
    """
    ClientUpdate(k, w_t): E local epochs on the shard starting from a copy of
    `w_global`.

    Parameters
    ----------
    w_global : ModelParams
        Global model snapshot; not modified.
    shard : ClientShard
        Scaled local data.
    cfg : FedConfig
        Supplies E, B, alpha and the optimizer kind.
    rng : np.random.Generator
        Shuffling stream, see `client_rng`.
    spec : ArchitectureSpec
        Model architecture.
    optimizer_state : OptimizerState, optional
        State carried over from the client's previous round.

    Returns
    -------
    RoundUpdate
        Local parameters, n_k, loss of the local model on the whole shard and the
        updated optimizer state.

    Raises
    ------
    ValueError
        If the shard is empty or `w_global` is not finite.
    NumericalError
        If local training produced non-finite parameters.
    """
    if shard.n_k < 1:
        raise ValueError(f"Shard of client {shard.client_id} is empty.")
    if not w_global.is_finite():
        raise ValueError("`w_global` contains non-finite values.")

    state = optimizer_state if optimizer_state is not None else init_optimizer(cfg.optimizer, cfg.learning_rate)
    params, state, steps = run_local_epochs(
        w_global.copy(), state, shard.data, spec, cfg.local_epochs, cfg.batch_size, rng
    )
    if not params.is_finite():
        raise NumericalError(f"Client {shard.client_id} produced non-finite parameters.")

    loss = evaluate_loss(params, spec, shard.data)
    logger.debug("client %d: %d steps, local loss %.6e", shard.client_id, steps, loss)
    return RoundUpdate(
        client_id=shard.client_id,
        params_local=params,
        n_k=shard.n_k,
        local_train_loss=loss,
        steps=steps,
        optimizer_state=state,
    )


def aggregation_weights(updates: Sequence[RoundUpdate]) -> np.ndarray:
    """n_k / n for each update, in the given order."""
    counts = np.array([u.n_k for u in updates], dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("Total sample count of the updates should be positive.")
    return counts / total


def aggregate(updates: Sequence[RoundUpdate], deterministic: bool = True) -> ModelParams:
    """
    Sample-weighted average sum_k (n_k / n) w^k of the client parameters.

    Evaluated as w_ref + sum_k (n_k / n)(w^k - w_ref) with w_ref the first update
    in reduction order, so identical updates average to themselves exactly. With
    `deterministic` the reduction runs in ascending client_id order; otherwise in
    the order given.

    Raises
    ------
    ValueError
        If `updates` is empty, layouts differ or the total count is not positive.

    Examples
    --------
    >>> a = RoundUpdate(0, ModelParams(np.array([1.0, 1.0]), ((1, 1),)), 1, 0.0)
    >>> b = RoundUpdate(1, ModelParams(np.array([4.0, 4.0]), ((1, 1),)), 3, 0.0)
    >>> aggregate([a, b]).values
    array([3.25, 3.25])
    """
    if not updates:
        raise ValueError("`updates` should contain at least one update.")
    ordered = sorted(updates, key=lambda u: u.client_id) if deterministic else list(updates)
    shapes = ordered[0].params_local.shapes
    for u in ordered:
        if u.params_local.shapes != shapes:
            raise ValueError(f"Client {u.client_id} parameter layout {u.params_local.shapes} differs from {shapes}.")

    weights = aggregation_weights(ordered)
    reference = ordered[0].params_local.values
    delta = np.zeros_like(reference)
    for weight, u in zip(weights, ordered):
        delta += weight * (u.params_local.values - reference)
    return ModelParams(values=reference + delta, shapes=shapes)


class InProcessClientPool:
    """
    Clients living in this process. Keeps each client's optimizer state between
    rounds; with ``cfg.workers > 1`` client updates run on a thread pool.
    """

    def __init__(self, shards: Sequence[ClientShard], spec: ArchitectureSpec, cfg: FedConfig):
        self.shards: Dict[int, ClientShard] = {s.client_id: s for s in shards}
        if len(self.shards) != len(shards):
            raise ValueError("Client ids of `shards` should be unique.")
        self.spec = spec
        self.cfg = cfg
        self.states: Dict[int, OptimizerState] = {}

    @property
    def client_ids(self) -> List[int]:
        return sorted(self.shards)

    def _update(self, w_t: ModelParams, round_index: int, client_id: int) -> RoundUpdate:
        rng = client_rng(self.cfg.seed, round_index, client_id)
        return client_update(w_t, self.shards[client_id], self.cfg, rng, self.spec, self.states.get(client_id))

    def dispatch(self, w_t: ModelParams, round_index: int, client_ids: Sequence[int]) -> List[RoundUpdate]:
        """Run ClientUpdate for `client_ids`; results in completion order."""
        if self.cfg.workers > 1 and len(client_ids) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
                futures = [executor.submit(self._update, w_t, round_index, cid) for cid in client_ids]
                updates = [f.result() for f in as_completed(futures)]
        else:
            updates = [self._update(w_t, round_index, cid) for cid in client_ids]
        for u in updates:
            self.states[u.client_id] = u.optimizer_state
        return updates

    def close(self) -> None:
        return


def select_clients(cfg: FedConfig, round_index: int, client_ids: Sequence[int]) -> List[int]:
    """
    ceil(participation * K) clients for this round; all of them at participation 1.
    """
    client_ids = sorted(client_ids)
    m = math.ceil(cfg.participation * len(client_ids))
    if m >= len(client_ids):
        return client_ids
    rng = np.random.default_rng([int(cfg.seed), int(round_index)])
    return sorted(int(c) for c in rng.choice(client_ids, size=m, replace=False))


def _as_pool(shards_or_pool, spec: ArchitectureSpec, cfg: FedConfig):
    if hasattr(shards_or_pool, "dispatch"):
        return shards_or_pool
    return InProcessClientPool(list(shards_or_pool), spec, cfg)


def _validation_loss(params: ModelParams, spec: ArchitectureSpec, validation: Optional[np.ndarray]) -> float:
    if validation is None or len(validation) == 0:
        return float("nan")
    return evaluate_loss(params, spec, validation)


def _global_train_loss(params: ModelParams, spec: ArchitectureSpec, train: Optional[np.ndarray], pool) -> float:
    """
    Loss of the aggregated model on the training data: the pooled split when given,
    else the n_k-weighted mean over the in-process shards.
    """
    if train is not None and len(train):
        return evaluate_loss(params, spec, train)
    shards = getattr(pool, "shards", None)
    if not shards:
        return float("nan")
    ordered = [shards[cid] for cid in sorted(shards)]
    counts = np.array([s.n_k for s in ordered], dtype=np.float64)
    losses = [evaluate_loss(params, spec, s.data) for s in ordered]
    return float(np.dot(counts / counts.sum(), losses))


def run_round(
    w_t: ModelParams,
    shards,
    cfg: FedConfig,
    round_index: int,
    spec: ArchitectureSpec,
    validation: Optional[np.ndarray] = None,
    train: Optional[np.ndarray] = None,
) -> Tuple[ModelParams, RoundMetrics]:
    """
    One synchronous communication round.

    Every selected client receives the same snapshot of `w_t`; the round completes
    only when all of them have answered (aggregation is the barrier).

    Parameters
    ----------
    w_t : ModelParams
        Global model at the start of the round.
    shards : list of ClientShard or client pool
        K shards (wrapped in a fresh `InProcessClientPool`) or a pool.
    cfg : FedConfig
    round_index : int
        1-based round number.
    spec : ArchitectureSpec
    validation : np.ndarray, optional
        Server-side validation split (scaled).
    train : np.ndarray, optional
        Pooled training split (scaled). The logged train loss is the loss of
        w_{t+1} on it; without it the shards of an in-process pool are used.

    Returns
    -------
    tuple
        (w_{t+1}, RoundMetrics).

    Raises
    ------
    ValueError
        If the number of clients differs from ``cfg.clients``.
    RoundError
        If any client fails; the round is abandoned.
    """
    pool = _as_pool(shards, spec, cfg)
    if len(pool.client_ids) != cfg.clients:
        raise ValueError(f"Expected {cfg.clients} clients, got {len(pool.client_ids)}.")

    start = time.perf_counter()
    selected = select_clients(cfg, round_index, pool.client_ids)
    try:
        updates = pool.dispatch(w_t, round_index, selected)
    except Exception as exc:
        raise RoundError(round_index, f"client update failed: {exc}") from exc
    if sorted(u.client_id for u in updates) != selected:
        raise RoundError(round_index, f"expected updates from {selected}, got {[u.client_id for u in updates]}")

    w_next = aggregate(updates, cfg.deterministic)
    ordered = sorted(updates, key=lambda u: u.client_id)
    local_loss = float(np.dot(aggregation_weights(ordered), [u.local_train_loss for u in ordered]))
    logger.debug("round %d: weighted local loss before averaging %.6e", round_index, local_loss)
    train_loss = _global_train_loss(w_next, spec, train, pool)
    val_loss = _validation_loss(w_next, spec, validation)
    wall_ms = 1000.0 * (time.perf_counter() - start)

    logger.info("round %d: %d clients, train %.6e, val %.6e (%.1f ms)", round_index, len(updates), train_loss, val_loss, wall_ms)
    return w_next, RoundMetrics(round_index, train_loss, val_loss, wall_ms, tuple(selected))


def train_federated(
    cfg: FedConfig,
    shards,
    validation: Optional[np.ndarray],
    spec: ArchitectureSpec,
    initial: Optional[ModelParams] = None,
    train: Optional[np.ndarray] = None,
) -> Tuple[ModelParams, TrainingHistory]:
    """
    T rounds of federated averaging from init_params(spec, cfg.seed).

    Each record's train loss is the loss of that round's global model, on `train`
    when given (see `run_round`).

    Returns
    -------
    tuple
        (final global model, TrainingHistory with T records).

    Raises
    ------
    RoundError
        If a round fails; carries the round index.
    """
    cfg.validate()
    spec.validate()
    pool = _as_pool(shards, spec, cfg)
    w = initial.copy() if initial is not None else init_params(spec, cfg.seed)
    history = TrainingHistory()
    for t in range(1, cfg.rounds + 1):
        w, metrics = run_round(w, pool, cfg, t, spec, validation, train)
        history.append(metrics)
    return w, history


def train_centralized(
    cfg: FedConfig,
    train: np.ndarray,
    validation: Optional[np.ndarray],
    spec: ArchitectureSpec,
    initial: Optional[ModelParams] = None,
) -> Tuple[ModelParams, TrainingHistory]:
    """
    Minibatch training on pooled data, one history record per epoch.

    The epoch's train loss is the loss of the end-of-epoch model on the whole
    training matrix.

    Raises
    ------
    RoundError
        If an epoch fails; carries the epoch index.
    """
    cfg.validate()
    spec.validate()
    train = as_matrix(train, "train")
    w = initial.copy() if initial is not None else init_params(spec, cfg.seed)
    state = init_optimizer(cfg.optimizer, cfg.learning_rate)
    history = TrainingHistory()
    for epoch in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        try:
            w, state, _ = run_local_epochs(w, state, train, spec, 1, cfg.batch_size, client_rng(cfg.seed, epoch, 0))
        except (ValueError, FloatingPointError) as exc:
            raise RoundError(epoch, f"centralized epoch failed: {exc}") from exc
        train_loss = evaluate_loss(w, spec, train)
        val_loss = _validation_loss(w, spec, validation)
        wall_ms = 1000.0 * (time.perf_counter() - start)
        logger.info("epoch %d: train %.6e, val %.6e (%.1f ms)", epoch, train_loss, val_loss, wall_ms)
        history.append(RoundMetrics(epoch, train_loss, val_loss, wall_ms))
    return w, history
