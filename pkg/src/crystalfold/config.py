import logging
import os

import numpy as np

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
    filename="crystalfold.log",
)
logger = logging.getLogger(__name__)

# Isometry equality and arithmetic slack.
ISOMETRY_TOL = 1e-9
# Orbit equivalence and face classification.
EQUIVALENCE_TOL = 1e-7
FACE_TOL = 1e-7

MAX_WORD_LENGTH = 32
# Decimals used when hashing isometries and points.
KEY_DECIMALS = 8
PROJECT_DECIMALS = 12

AUTO_DELTA_FACTOR = 1.5
SNAP_FRACTION = 0.25
# Stand-in weight for zero-length edges in scipy.sparse.csgraph.
TINY_WEIGHT = 1e-12

IDW_NEIGHBOURS = 8
IDW_POWER = 2.0
MLS_RADIUS_FACTOR = 2.5

CLUSTER_GAP = 0.02
DENSE_EIGEN_LIMIT = 3000
GALERKIN_REGULARIZER = 1e-10
FD_STEP_FACTOR = 1e-4
GALERKIN_CENTERS = 200
QUADRATURE_RESOLUTION = {1: 400, 2: 64, 3: 20}
CHECK_RESOLUTION = {1: 512, 2: 96, 3: 28}

STRESS_TOL = 0.05
MAX_EMBED_DIM = 10
GLUING_FACTOR = 0.1

SMO_TOL = 1e-3
SMO_MAX_PASSES = 10_000
MLP_HIDDEN = (10, 10, 10)

THREADS_ENV = "CRYSTALFOLD_THREADS"


def max_workers():
    """Returns the worker-thread cap for internal thread pools.

    The cap is read from the ``CRYSTALFOLD_THREADS`` environment variable
    on every call so that tests and the CLI can change it at runtime.

    Returns:
        A positive integer.

    Raises:
        ValueError: If the variable is set but is not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return min(32, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        logger.error(f"{THREADS_ENV}={raw!r} is not an integer")
        raise ValueError(
            f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        )
    if value < 1:
        logger.error(f"{THREADS_ENV}={value} is not positive")
        raise ValueError(f"{THREADS_ENV} must be positive, got {value}")
    return value


def make_rng(seed):
    """Counter-based generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed, count):
    """Independent counter-based streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]
