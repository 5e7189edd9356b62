import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def layout():
    from eshopsim.scenario import SiteLayout

    return SiteLayout()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def tiny_config(out_dir, **overrides):
    """Small but complete experiment configuration for pipeline tests."""
    from eshopsim.config import ExperimentConfig
    from eshopsim.dataset import DatasetConfig
    from eshopsim.events import HcpConfig
    from eshopsim.scenario import ScenarioConfig
    from eshopsim.tcn import TcnModelConfig, TrainConfig

    cfg = ExperimentConfig(
        scenario=ScenarioConfig(num_ues=5, duration_s=14.0, speeds_mps=(25.0,)),
        hcp=HcpConfig(hysteresis_db=1.0),
        dataset=DatasetConfig(window_len=16, horizon_s=8.0),
        model=TcnModelConfig(
            kernel_size=3, dilations=(1, 2, 4), hidden_channels=8, dense_sizes=(8,)
        ),
        train=TrainConfig(epochs=2, dtype="float32", batch_size=32, patience=0, seed=0),
        output_dir=str(out_dir),
        master_seed=7,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg
