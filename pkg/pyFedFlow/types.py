from typing import Literal, TypeAlias, Tuple

import numpy as np

# Type Aliases for static type checking

#: Rows are time-ordered samples, columns are grid points.
SnapshotMatrix: TypeAlias = np.ndarray

#: Layer (fan_in, fan_out) pairs in parameter order.
LayerShapes: TypeAlias = Tuple[Tuple[int, int], ...]

#: Client partition schemes.
PartitionScheme: TypeAlias = Literal['contiguous', 'strided', 'shuffled']

#: Local optimizers.
OptimizerKind: TypeAlias = Literal['sgd', 'adam']

#: Layer activations.
Activation: TypeAlias = Literal['tanh', 'identity']

#: Harness training modes.
TrainingMode: TypeAlias = Literal['central', 'federated']

#: Federated transports.
Transport: TypeAlias = Literal['inproc', 'socket']

#: Methods compared in the evaluation report.
ReportMethod: TypeAlias = Literal['pod', 'ae-central', 'ae-federated']


# Lists for runtime validation

VALID_PARTITION_SCHEMES = ['contiguous', 'strided', 'shuffled']
VALID_OPTIMIZERS = ['sgd', 'adam']
VALID_ACTIVATIONS = ['tanh', 'identity']
VALID_MODES = ['central', 'federated']
VALID_TRANSPORTS = ['inproc', 'socket']
VALID_REPORT_METHODS = ['pod', 'ae-central', 'ae-federated']
VALID_PRESETS = ['desk', 'full']
