"""Session fixtures: the two full-size training runs shared by the acceptance checks."""
import time
from dataclasses import replace

import pytest

from anticipate import dataset as D, trainer as Tr

DEFAULT_DATA_SEED = 0


@pytest.fixture(scope="session")
def default_data():
    return D.gen_synthetic(D.GenConfig(), DEFAULT_DATA_SEED)


@pytest.fixture(scope="session")
def long_horizon_run(default_data):
    cfg = Tr.fit_model_dims(Tr.TrainConfig(), default_data)
    start = time.perf_counter()
    result = Tr.train(default_data, cfg)
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def frame_level_run(default_data):
    cfg = Tr.fit_model_dims(Tr.TrainConfig(), default_data)
    return Tr.train(default_data, replace(cfg, model=replace(cfg.model, window=0)))
