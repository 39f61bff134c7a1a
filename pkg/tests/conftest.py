import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fitted_small_model():
    """A flow fitted to logistic-function data at reduced size, shared by
    the predictive/CLI tests that need a realistic trained model."""
    from monoflow.bench import make_dataset
    from monoflow.train import OptimizerConfig, fit, init_model

    data = make_dataset("logistic", 32, 1.0, seed=11)
    model0 = init_model(data, 9, 1.0, seed=7)
    cfg = OptimizerConfig(max_iters=900, plateau_patience=200, seed=7,
                          precision="float32")
    model, _ = fit(data, model0, cfg)
    return model, data


@pytest.fixture(scope="session")
def fitted_checkpoint(fitted_small_model, tmp_path_factory):
    from monoflow.checkpoint import write_checkpoint

    model, _ = fitted_small_model
    path = tmp_path_factory.mktemp("ckpt") / "checkpoint.json"
    write_checkpoint(path, model, config={"fixture": "logistic-small"},
                     master_seed=7)
    return path
