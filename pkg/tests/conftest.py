import numpy as np
import pytest
from dotenv import load_dotenv

from histotnet.core.rng import Rng
from histotnet.core.synth import SynthSpec, synth_slide
from histotnet.stage_logger import stage_logger

# Load HISTOTNET_* settings for tests that read RuntimeSettings
load_dotenv()


@pytest.fixture(autouse=True, scope="function")
def clear_stage_logger():
    """Reset the global stage logger between tests."""
    stage_logger.clear()
    yield
    stage_logger.clear()


@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def small_slide():
    """48×40 synthetic slide with its mask."""
    spec = SynthSpec(height=48, width=40, priors=(0.6, 0.1, 0.1, 0.2), noise_level=0.02)
    return synth_slide(spec, Rng(7))


@pytest.fixture
def random_mask():
    def make(height: int, width: int, seed: int = 0, classes: int = 4) -> np.ndarray:
        return np.random.default_rng(seed).integers(0, classes, size=(height, width)).astype(np.uint8)

    return make
