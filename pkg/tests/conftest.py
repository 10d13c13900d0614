import numpy as np
import pytest
from hypothesis import strategies as st

from cfworld.grid import GridGeometry, SemanticGrid, SemanticLabel

SMALL = GridGeometry(40, 40, 8, 0.4, (-8.0, -8.0, -1.0))

# non-Free label masks: any subset of bits 1..9
occupied_masks = st.integers(min_value=1, max_value=(1 << 10) - 1).map(lambda m: m & ~1)


def random_grid(rng, geom=SMALL, density=0.2) -> SemanticGrid:
    bits = rng.integers(0, 1 << 10, size=geom.shape).astype(np.uint16) & np.uint16(0x3FE)
    keep = rng.random(geom.shape) < density
    return SemanticGrid(geom, np.where(keep, bits, 0).astype(np.uint16))


@st.composite
def grids(draw, geom=SMALL):
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.floats(0.0, 0.6))
    return random_grid(np.random.default_rng(seed), geom, density)


@pytest.fixture(scope="session")
def source_scenes():
    from cfworld.scenes import random_dataset
    return random_dataset(20, seed=7)


@pytest.fixture(scope="session")
def curriculum(source_scenes):
    from cfworld.synth import iter_curriculum
    return [item for item in iter_curriculum(source_scenes, 20, seed=3) if item.ok]


@pytest.fixture(scope="session")
def hazard():
    from cfworld.scenes import hazard_ahead
    return hazard_ahead()


def label_bits(*labels) -> int:
    m = 0
    for lab in labels:
        m |= SemanticLabel(lab).bit
    return m


# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
