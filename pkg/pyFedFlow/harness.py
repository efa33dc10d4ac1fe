"""
Command-line harness: data generation, POD baseline, centralized and federated
training, and evaluation.

Every command reads an `ExperimentConfig` (preset < ``--config`` file < flags) and
writes into ``output_dir``:

==========================  ===============================================
``generate``                ``dataset.ksds``, ``transient.ksef``
``pod``                     ``pod_mse.csv`` (R, train_mse, test_mse)
``train``                   ``ae-<mode>-R<R>.fwts``, ``history-<mode>-R<R>.csv``
``serve`` / ``client``      federated training with remote client processes
``evaluate``                ``report.csv``, ``error-<method>-R<R>.ksef``, ``test-true.ksef``
==========================  ===============================================
"""
import argparse
import csv
import os
import subprocess
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, add_config_arguments, build_config, write_config_file
from .datastore import DatasetSplits, build_splits, load_dataset, partition, save_dataset, save_field
from .errors import RoundError
from .fedcore import TrainingHistory, train_centralized, train_federated
from .kssolver import run_protocol
from .log import configure_logging, get_logger
from .neuralnet import ArchitectureSpec, ModelParams, autoencode, load_checkpoint, save_checkpoint
from .pod import compute_pod, mse_sweep, project, reconstruct
from .transport import SocketClientPool, bind, bound_address, connect, run_client
from .types import *
from .utils import *

logger = get_logger(__name__)

RUN_CONFIG_NAME = "run.cfg"
TRANSIENT_FILE = "transient.ksef"
POD_CSV = "pod_mse.csv"
REPORT_CSV = "report.csv"
TRUE_FIELD_FILE = "test-true.ksef"


@dataclass
class EvaluationReport:
    """
    Test-set reconstruction errors in physical units.

    rows holds (method, R, test_mse_physical); error_fields maps a method name to
    |true - predicted| over the test split at the report's error-field R.
    """
    rows: List[Tuple[str, int, float]] = field(default_factory=list)
    error_fields: Dict[str, np.ndarray] = field(default_factory=dict)

    def mse(self, method: str, R: int) -> float:
        for m, r, value in self.rows:
            if m == method and r == R:
                return value
        raise KeyError(f"No {method} row for R={R}")

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["method", "R", "test_mse_physical"])
            for method, R, value in self.rows:
                writer.writerow([method, R, f"{value:.17g}"])


def checkpoint_path(output_dir: str, mode: str, R: int) -> str:
    return os.path.join(output_dir, f"ae-{mode}-R{R}.fwts")


def history_path(output_dir: str, mode: str, R: int) -> str:
    return os.path.join(output_dir, f"history-{mode}-R{R}.csv")


def error_field_path(output_dir: str, method: str, R: int) -> str:
    return os.path.join(output_dir, f"error-{method}-R{R}.ksef")


def error_field(true: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """
    Pointwise absolute error.

    Examples
    --------
    >>> float(error_field(np.ones((2, 3)), np.ones((2, 3))).max())
    0.0
    """
    true = np.asarray(true, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if true.shape != predicted.shape:
        raise ValueError(f"`predicted` should have shape {true.shape}, got {predicted.shape}.")
    return np.abs(true - predicted)


def ae_predict(params: ModelParams, spec: ArchitectureSpec, splits: DatasetSplits, X: np.ndarray) -> np.ndarray:
    """Autoencoder reconstruction of physical snapshots `X`, in physical units."""
    return splits.scaler.invert(autoencode(params, spec, splits.scaler.apply(X)))


def _ensure_output_dir(cfg: ExperimentConfig) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)


def _load(cfg: ExperimentConfig) -> DatasetSplits:
    splits = load_dataset(cfg.dataset_path)
    if splits.train.shape[1] != cfg.grid_size:
        raise ValueError(f"Dataset has {splits.train.shape[1]} grid points, config expects `grid_size`={cfg.grid_size}.")
    return splits


def cmd_generate(cfg: ExperimentConfig) -> DatasetSplits:
    """
    Run the KS protocol and write the dataset and the transient field.

    Raises
    ------
    NumericalBlowupError
        If the solver diverges; the error carries the simulation time.
    """
    _ensure_output_dir(cfg)
    transient, production, test = run_protocol(cfg.ks_params(), cfg.production_end, cfg.test_end)
    splits = build_splits(production, test, cfg.train_fraction)
    save_dataset(cfg.dataset_path, splits)
    save_field(os.path.join(cfg.output_dir, TRANSIENT_FILE), transient.snapshots)
    print(f"samples: train {len(splits.train)}, validation {len(splits.validation)}, test {len(splits.test)}")
    print(f"dataset written to: {cfg.dataset_path}")
    return splits


def cmd_pod(cfg: ExperimentConfig, R_list: Optional[Sequence[int]] = None) -> List[Tuple[int, float, float]]:
    """POD of the physical training split, swept over `R_list` (default ``r_sweep``)."""
    _ensure_output_dir(cfg)
    splits = _load(cfg)
    basis = compute_pod(splits.train, center=cfg.pod_center)
    rows = mse_sweep(basis, splits.train, splits.test, R_list or cfg.r_sweep)
    path = os.path.join(cfg.output_dir, POD_CSV)
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["R", "train_mse", "test_mse"])
        for R, train_mse, test_mse in rows:
            writer.writerow([R, f"{train_mse:.17g}", f"{test_mse:.17g}"])
    print(f"POD sweep written to: {path}")
    return rows


def _save_run(cfg: ExperimentConfig, mode: str, R: int, params: ModelParams, history: TrainingHistory) -> None:
    save_checkpoint(checkpoint_path(cfg.output_dir, mode, R), params)
    history.write_csv(history_path(cfg.output_dir, mode, R), include_timing=not cfg.deterministic)
    print(f"{mode} R={R}: final val loss {history.val_losses[-1]:.6e}, checkpoint written to: "
          f"{checkpoint_path(cfg.output_dir, mode, R)}")


def _spawn_clients(config_path: str, address: str, n_clients: int, R: int) -> List[subprocess.Popen]:
    env = dict(os.environ)
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    env["PYTHONPATH"] = os.pathsep.join(p for p in (root, env.get("PYTHONPATH")) if p)
    procs = []
    for shard in range(n_clients):
        command = [sys.executable, "-m", "pyFedFlow", "client",
                   "--config", config_path, "--connect", address,
                   "--shard", str(shard), "--latent-dim", str(R)]
        procs.append(subprocess.Popen(command, env=env))
    return procs


def _reap_clients(procs: List[subprocess.Popen], timeout: float) -> None:
    """Wait for spawned clients; kill any that outlive `timeout` seconds."""
    for proc in procs:
        try:
            status = proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            logger.error("client process %d still running after %gs, killing it", proc.pid, timeout)
            proc.kill()
            status = proc.wait()
        if status != 0:
            logger.warning("client process %d exited with status %d", proc.pid, status)


def _train_over_sockets(cfg: ExperimentConfig, splits: DatasetSplits, spec: ArchitectureSpec,
                        spawn: bool = True) -> Tuple[ModelParams, TrainingHistory]:
    fed = cfg.fed_config('federated')
    server = bind(cfg.listen)
    address = bound_address(server)
    logger.info("server listening on %s for %d clients", address, fed.clients)
    procs: List[subprocess.Popen] = []
    try:
        if spawn:
            config_path = os.path.join(cfg.output_dir, RUN_CONFIG_NAME)
            write_config_file(config_path, replace(cfg, dataset=os.path.abspath(cfg.dataset_path)))
            procs = _spawn_clients(config_path, address, fed.clients, spec.latent_dim)
        else:
            print(f"listening on: {address}")
        pool = SocketClientPool.accept(server, fed.clients, cfg.connect_timeout)
        try:
            return train_federated(fed, pool, splits.validation, spec, train=splits.train)
        finally:
            pool.close()
    except BaseException:
        for proc in procs:
            proc.kill()
        raise
    finally:
        server.close()
        _reap_clients(procs, cfg.connect_timeout)


def train_one(cfg: ExperimentConfig, splits: DatasetSplits, R: int, mode: Optional[str] = None,
              spawn: bool = True) -> Tuple[ModelParams, TrainingHistory]:
    """
    Train one autoencoder with latent dimension `R` on scaled data.

    Parameters
    ----------
    cfg : ExperimentConfig
    splits : DatasetSplits
        Physical-unit splits; scaling is applied here.
    R : int
        Latent dimension.
    mode : str, optional
        'central' or 'federated'; defaults to ``cfg.mode``.
    spawn : bool, optional
        Socket transport only: start the client processes locally (True) or wait
        for externally started clients (False).

    Returns
    -------
    tuple
        (trained params, TrainingHistory)
    """
    mode = check_option(mode or cfg.mode, VALID_MODES, "mode")
    spec = cfg.architecture(R).validate()
    scaled = splits.scaled()
    if mode == 'central':
        return train_centralized(cfg.fed_config('central'), scaled.train, scaled.validation, spec)
    if check_option(cfg.transport, VALID_TRANSPORTS, "transport") == 'socket':
        return _train_over_sockets(cfg, scaled, spec, spawn)
    shards = partition(scaled.train, cfg.clients, cfg.partition, cfg.seed)
    return train_federated(cfg.fed_config('federated'), shards, scaled.validation, spec, train=scaled.train)


def cmd_train(cfg: ExperimentConfig, sweep: bool = False) -> Dict[int, TrainingHistory]:
    """Train at ``latent_dim`` (or every R of ``r_sweep``) and save each run."""
    _ensure_output_dir(cfg)
    splits = _load(cfg)
    mode = check_option(cfg.mode, VALID_MODES, "mode")
    histories = {}
    for R in (cfg.r_sweep if sweep else (cfg.latent_dim,)):
        params, history = train_one(cfg, splits, R, mode)
        _save_run(cfg, mode, R, params, history)
        histories[R] = history
    return histories


def cmd_serve(cfg: ExperimentConfig) -> TrainingHistory:
    """Federated training at ``latent_dim`` with clients started elsewhere."""
    _ensure_output_dir(cfg)
    splits = _load(cfg)
    cfg = replace(cfg, mode='federated', transport='socket')
    params, history = train_one(cfg, splits, cfg.latent_dim, spawn=False)
    _save_run(cfg, 'federated', cfg.latent_dim, params, history)
    return history


def cmd_client(cfg: ExperimentConfig, address: str, shard_index: int) -> int:
    """Serve one shard of the scaled training split to the server at `address`."""
    splits = _load(cfg).scaled()
    shards = partition(splits.train, cfg.clients, cfg.partition, cfg.seed)
    if not 0 <= shard_index < len(shards):
        raise ValueError(f"`shard` should be in [0, {len(shards) - 1}], got {shard_index}.")
    sock = connect(address, cfg.connect_timeout)
    rounds = run_client(sock, shards[shard_index], cfg.architecture(), cfg.fed_config('federated'))
    logger.info("client %d served %d rounds", shard_index, rounds)
    return rounds


def cmd_evaluate(cfg: ExperimentConfig, R_list: Optional[Sequence[int]] = None) -> EvaluationReport:
    """
    Test MSE in physical units for POD and both autoencoders, plus error fields
    at ``error_field_r``.

    Autoencoder rows are produced for every R whose checkpoint exists in
    ``output_dir``; missing checkpoints are logged and skipped.
    """
    _ensure_output_dir(cfg)
    splits = _load(cfg)
    test = splits.test
    basis = compute_pod(splits.train, center=cfg.pod_center)
    R_list = sorted(set(R_list or cfg.r_sweep) | {cfg.error_field_r})
    report = EvaluationReport()
    for R in R_list:
        predictions = {'pod': reconstruct(basis, project(basis, test, R), R)}
        for mode in VALID_MODES:
            path = checkpoint_path(cfg.output_dir, mode, R)
            if not os.path.exists(path):
                logger.warning("no %s checkpoint for R=%d (%s)", mode, R, path)
                continue
            params = load_checkpoint(path)
            spec = ArchitectureSpec.from_shapes(params.shapes, hidden_activation=cfg.hidden_activation,
                                                latent_activation=cfg.latent_activation)
            predictions[f"ae-{mode}"] = ae_predict(params, spec, splits, test)
        for method in VALID_REPORT_METHODS:
            if method in predictions:
                report.rows.append((method, R, float(np.mean((test - predictions[method]) ** 2))))
        if R == cfg.error_field_r:
            report.error_fields = {m: error_field(test, p) for m, p in predictions.items()}

    report.write_csv(os.path.join(cfg.output_dir, REPORT_CSV))
    save_field(os.path.join(cfg.output_dir, TRUE_FIELD_FILE), test)
    for method, values in report.error_fields.items():
        save_field(error_field_path(cfg.output_dir, method, cfg.error_field_r), values)
    print(f"report written to: {os.path.join(cfg.output_dir, REPORT_CSV)}")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyFedFlow", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("generate", "simulate KS and write the dataset"),
        ("pod", "POD reconstruction MSE sweep"),
        ("train", "train an autoencoder (central or federated)"),
        ("serve", "federated server waiting for remote clients"),
        ("client", "federated client process"),
        ("evaluate", "test-set report and error fields"),
    ):
        sub = commands.add_parser(name, help=help_text, allow_abbrev=False)
        add_config_arguments(sub)
        if name == "train":
            sub.add_argument("--sweep", action="store_true", help="train one model per R in r_sweep")
        if name == "client":
            sub.add_argument("--connect", required=True, help="server address host:port")
            sub.add_argument("--shard", required=True, type=int, help="shard (client) index")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    configure_logging(cfg.log_level)
    try:
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "pod":
            cmd_pod(cfg)
        elif args.command == "train":
            cmd_train(cfg, sweep=args.sweep)
        elif args.command == "serve":
            cmd_serve(cfg)
        elif args.command == "client":
            cmd_client(cfg, args.connect, args.shard)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
    except (ValueError, ArithmeticError, OSError, RoundError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    return 0
