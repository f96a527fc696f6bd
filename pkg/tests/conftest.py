import numpy as np
import pytest
import torch

from objdepth.config import AttentionConfig, ModelConfig
from objdepth.synth import SceneSpec, write_split


@pytest.fixture(params=["numba", "numpy"])
def kernel_mode(request, monkeypatch):
    """Run a test once with the compiled kernels and once with the numpy fallback."""
    if request.param == "numpy":
        monkeypatch.setenv("OBJDEPTH_DISABLE_NUMBA", "1")
    else:
        monkeypatch.delenv("OBJDEPTH_DISABLE_NUMBA", raising=False)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**changes):
    """Small network that still satisfies every shape contract at 64 x 80."""
    base = ModelConfig(
        attention=AttentionConfig(layers=1, heads=2, ff_dim=32, embed_dim=16),
        backbone_channels=(4, 4, 8, 16),
        kernel_tokens=8,
        n_bins=16,
        batch_size=2,
        precision="f64",
    )
    return base.with_(**changes)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_split(tmp_path_factory):
    out = tmp_path_factory.mktemp("split")
    write_split(SceneSpec(seed=3), 6, str(out))
    return str(out)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
