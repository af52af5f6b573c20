from __future__ import annotations

from typing import NamedTuple

import numpy as np


class EigenPair(NamedTuple):
    """Eigenvalues ``w`` (ascending) and orthonormal eigenvectors ``z`` (columns)."""

    w: np.ndarray
    z: np.ndarray
