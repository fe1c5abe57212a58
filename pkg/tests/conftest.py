import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adafcn.config import ModelConfig  # noqa: E402
from adafcn.model import AdaFCN  # noqa: E402
from adafcn.tensorcore import set_debug  # noqa: E402

set_debug(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    cfg = ModelConfig(K=2, n_roi=8, t_len=64, n_classes=2, d_cross=6, gcn_dims=[10, 7], mlp_hidden=12)
    return AdaFCN(cfg, seed=3)
