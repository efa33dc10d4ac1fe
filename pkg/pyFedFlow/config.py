"""
Experiment configuration: presets, ``key = value`` files and CLI overrides.

Precedence is preset < config file < command-line flags. Every field of
`ExperimentConfig` can be set in a file (``rounds = 200``) or by flag
(``--rounds 200``).
"""
import argparse
import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Tuple

from .fedcore import FedConfig
from .kssolver import KSParams
from .neuralnet import ArchitectureSpec
from .types import *
from .utils import *


@dataclass(frozen=True)
class ExperimentConfig:
    # KS data
    domain_length: float = 22.0
    grid_size: int = 64
    dt: float = 2.5e-3
    transient_start: float = -250.0
    sample_interval: float = 0.25
    contour_points: int = 32
    dealias: bool = False
    production_end: float = 2500.0
    test_end: float = 3750.0
    # dataset
    train_fraction: float = 0.8
    partition: PartitionScheme = 'contiguous'
    # model
    latent_dim: int = 8
    hidden_dims: Tuple[int, ...] = (32, 16)
    hidden_activation: Activation = 'tanh'
    latent_activation: Activation = 'identity'
    # training
    mode: TrainingMode = 'federated'
    clients: int = 10
    local_epochs: int = 1
    batch_size: int = 32
    central_batch_size: int = 320
    learning_rate: float = 1e-3
    rounds: int = 500
    optimizer: OptimizerKind = 'adam'
    participation: float = 1.0
    workers: int = 1
    deterministic: bool = True
    seed: int = 0
    # transport
    transport: Transport = 'inproc'
    listen: str = '127.0.0.1:0'
    connect_timeout: float = 60.0
    # evaluation / output
    r_sweep: Tuple[int, ...] = (2, 4, 8, 12, 16)
    error_field_r: int = 8
    pod_center: bool = True
    output_dir: str = 'runs'
    dataset: str = ''
    log_level: str = 'INFO'

    @property
    def dataset_path(self) -> str:
        return self.dataset or os.path.join(self.output_dir, 'dataset.ksds')

    def ks_params(self) -> KSParams:
        return KSParams(
            domain_length=self.domain_length,
            grid_size=self.grid_size,
            dt=self.dt,
            transient_start=self.transient_start,
            sample_interval=self.sample_interval,
            contour_points=self.contour_points,
            seed=self.seed,
            dealias=self.dealias,
        )

    def architecture(self, latent_dim: Optional[int] = None) -> ArchitectureSpec:
        return ArchitectureSpec(
            input_dim=self.grid_size,
            latent_dim=self.latent_dim if latent_dim is None else latent_dim,
            hidden_dims=tuple(self.hidden_dims),
            hidden_activation=self.hidden_activation,
            latent_activation=self.latent_activation,
        )

    def fed_config(self, mode: Optional[str] = None) -> FedConfig:
        """FedConfig for `mode`; centralized runs use `central_batch_size`."""
        mode = check_option(mode or self.mode, VALID_MODES, "mode")
        return FedConfig(
            clients=self.clients,
            local_epochs=self.local_epochs,
            batch_size=self.central_batch_size if mode == 'central' else self.batch_size,
            learning_rate=self.learning_rate,
            rounds=self.rounds,
            optimizer=self.optimizer,
            seed=self.seed,
            deterministic=self.deterministic,
            participation=self.participation,
            workers=self.workers,
        )

    def validate(self) -> "ExperimentConfig":
        """
        Check every sub-configuration and the cross-field constraints.

        Raises
        ------
        ValueError
            On any invalid or inconsistent value.
        """
        params = self.ks_params().validate()
        if not self.transient_start < 0.0 < self.production_end < self.test_end:
            raise ValueError("Expected `transient_start` < 0 < `production_end` < `test_end`.")
        for name in ('production_end', 'test_end'):
            integer_ratio(getattr(self, name) - (0.0 if name == 'production_end' else self.production_end),
                          params.sample_interval, name)
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("`train_fraction` should be in (0, 1].")
        check_option(self.partition, VALID_PARTITION_SCHEMES, "partition")
        check_option(self.mode, VALID_MODES, "mode")
        check_option(self.transport, VALID_TRANSPORTS, "transport")
        parse_listen = self.listen.rpartition(":")
        if not parse_listen[2].isdigit():
            raise ValueError(f"`listen` should look like 'host:port', got {self.listen!r}.")
        self.architecture().validate()
        for R in self.r_sweep:
            if not 1 <= R <= self.grid_size:
                raise ValueError(f"`r_sweep` values should be in [1, {self.grid_size}], got {R}.")
        if not 1 <= self.error_field_r < self.grid_size:
            raise ValueError(f"`error_field_r` should be in [1, {self.grid_size - 1}].")
        self.fed_config('federated').validate()
        self.fed_config('central').validate()
        return self


#: Named starting points; 'desk' gives 2,000 / 500 / 1,000 samples, 200 rounds, Adam step 5e-3.
PRESETS: Dict[str, Dict[str, object]] = {
    'full': {},
    'desk': {'production_end': 625.0, 'test_end': 875.0, 'rounds': 200, 'learning_rate': 5e-3},
}


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"Expected a boolean value, got {text!r}.")


def _field_types() -> Dict[str, type]:
    defaults = ExperimentConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(ExperimentConfig)}


def parse_value(key: str, text: str):
    """Convert `text` to the type of field `key`."""
    types = _field_types()
    if key not in types:
        raise ValueError(f"Unknown configuration key `{key}`.")
    kind = types[key]
    text = text.strip()
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is tuple:
            return tuple(int(part) for part in text.split(",") if part.strip())
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise ValueError(f"Bad value for `{key}`: {exc}") from None
    return text


def read_config_file(path: str) -> Dict[str, object]:
    """
    Parse a flat ``key = value`` file. ``#`` starts a comment.

    Raises
    ------
    FileNotFoundError
        If `path` does not exist.
    ValueError
        On malformed lines or unknown keys (message names the line number).
    """
    check_file_existence(path)
    values = {}
    with open(path, "r") as file:
        for number, raw in enumerate(file, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{number}: expected 'key = value'.")
            key, text = (part.strip() for part in line.split("=", 1))
            try:
                values[key] = parse_value(key, text)
            except ValueError as exc:
                raise ValueError(f"{path}:{number}: {exc}") from None
    return values


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """One ``--key-name`` flag per field, all defaulting to None (= not given)."""
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--preset", choices=VALID_PRESETS, default="full", help="starting values (default: full)")
    for name, kind in _field_types().items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, dest=name, default=None, type=_parse_bool, metavar="BOOL")
        else:
            parser.add_argument(flag, dest=name, default=None, type=str, metavar=kind.__name__.upper())


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset, then config file, then flags."""
    values: Dict[str, object] = dict(PRESETS[getattr(args, "preset", None) or "full"])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _field_types():
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given if isinstance(given, bool) else parse_value(name, given)
    return replace(ExperimentConfig(), **values).validate()


def write_config_file(path: str, config: ExperimentConfig) -> None:
    """Write every field as ``key = value`` so a run can be repeated exactly."""
    with open(path, "w") as file:
        for f in fields(config):
            value = getattr(config, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            file.write(f"{f.name} = {value}\n")
