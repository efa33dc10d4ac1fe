from . import config
from . import datastore
from . import errors
from . import fedcore
from . import harness
from . import kssolver
from . import log
from . import neuralnet
from . import pod
from . import protocol
from . import transport
from . import types
from . import utils

from .config import *
from .datastore import *
from .errors import *
from .fedcore import *
from .kssolver import *
from .log import *
from .neuralnet import *
from .pod import *
from .protocol import *
from .transport import *
from .types import *
from .utils import *

__version__ = "0.1.0"
