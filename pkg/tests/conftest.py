import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from imsbinary.binning import BinaryDataMatrix, BinGrid  # noqa: E402
from imsbinary.peaklist_io import Spectrum, canonical_dataset, write_dataset  # noqa: E402


def make_matrix(values, coords, width=0.25, name="m"):
    values = np.asarray(values, dtype=np.uint8)
    grid = BinGrid(1000.0, 4500.0, width)
    bins = 4000 + np.arange(values.shape[0])
    return BinaryDataMatrix(values, bins, coords, grid, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset_dir(tmp_path):
    spectra = [
        Spectrum(0, 0, [1000.10, 1200.00], [5.0, 3.2]),
        Spectrum(1, 0, [1000.20], [1.0]),
        Spectrum(0, 1, [1628.8015], [2.0]),
    ]
    ds = canonical_dataset("tiny", spectra, 1000.0, 4500.0)
    return write_dataset(ds, tmp_path / "tiny"), ds
