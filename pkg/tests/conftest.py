import os
import warnings

import numpy as np
import pytest

from lateral_dae.data import CIFAR_FILES, ImageSet
from lateral_dae.network import OvercompleteInitWarning


@pytest.fixture(autouse=True)
def _quiet_overcomplete():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OvercompleteInitWarning)
        yield


def write_cifar_dir(path, records_per_file=2, fill=None, seed=0):
    """Write a directory of CIFAR-10 style binary batches."""
    rng = np.random.default_rng(seed)
    os.makedirs(path, exist_ok=True)
    for name in CIFAR_FILES:
        recs = rng.integers(0, 256, size=(records_per_file, 3073), dtype=np.uint8)
        if fill is not None:
            recs[:, 1:] = fill
        recs.tofile(os.path.join(path, name))
    return path


def smooth_images(count=40, side=32, channels=3, seed=0):
    """Spatially correlated random images, a cheap stand-in for photos."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((count, side, side, channels))
    imgs = ndimage.gaussian_filter(raw, sigma=(0, 1.5, 1.5, 0))
    mask = np.zeros(count, dtype=bool)
    mask[-max(1, count // 5):] = True
    return ImageSet(imgs.astype(np.float32), mask)


@pytest.fixture
def images():
    return smooth_images()


class SparseStream:
    """Unit-variance sparse sources; a linear denoiser is not optimal here."""

    def __init__(self, dim=16, density=0.1):
        self.dim = dim
        self.density = density

    def sample(self, n, rng):
        s = rng.standard_normal((n, self.dim)) * (rng.random((n, self.dim)) < self.density)
        return s / np.sqrt(self.density)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
