import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmeselect import build_cme_matrix, standardize
from cmeselect.simulate import gen_equicorrelated_me


@pytest.fixture
def table1_design():
    """The two-ME design whose CME columns are known exactly."""
    A = np.array([1.0, 1.0, -1.0, -1.0])
    B = np.array([1.0, -1.0, 1.0, -1.0])
    return build_cme_matrix(np.column_stack([A, B]), names=["A", "B"])


def random_design(n, p, rho=0.0, seed=0, standardized=True):
    me = gen_equicorrelated_me(n, p, rho, seed)
    design = build_cme_matrix(me)
    return standardize(design) if standardized else design
