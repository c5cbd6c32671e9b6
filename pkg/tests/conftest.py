import numpy as np
import pytest

from fentropy.dynamics import cat_map, t3_automorphism

# independent oracles: closed-form roots
GOLDEN_SQ = (3 + 5 ** 0.5) / 2
LOG_CAT = float(np.log(GOLDEN_SQ))
T3_ROOTS = sorted((2 * np.cos(k * np.pi / 7) for k in (1, 3, 5)), key=abs)  # s, c, u


@pytest.fixture(scope="session")
def cat():
    return cat_map()


@pytest.fixture(scope="session")
def t3():
    return t3_automorphism()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
