import numpy as np
import pytest

from topical_gibbs.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(20240801, 0)


def fresh_rng(seed, stream=0):
    return RngStream(seed, stream)


def mc_se(draws):
    draws = np.asarray(draws, dtype=float)
    return draws.std(ddof=1) / np.sqrt(draws.size)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)
