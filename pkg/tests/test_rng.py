import numpy as np
import pytest

from ulmc_lab import rng


def test_stream_is_a_pure_function_of_its_cell():
    a = rng.stream(7, 3, 11, rng.STEP_NOISE).standard_normal(5)
    b = rng.stream(7, 3, 11, rng.STEP_NOISE).standard_normal(5)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [(8, 3, 11, rng.STEP_NOISE), (7, 4, 11, rng.STEP_NOISE), (7, 3, 12, rng.STEP_NOISE), (7, 3, 11, rng.INIT_DRAW)],
)
def test_neighbouring_cells_differ(other):
    a = rng.stream(7, 3, 11, rng.STEP_NOISE).standard_normal(64)
    b = rng.stream(*other).standard_normal(64)
    assert not np.allclose(a, b)
    # independent standard normals: the sample correlation is O(1/sqrt(64))
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.5


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        rng.stream(-1, 0, 0)


def test_blocks_cover_range_without_overlap():
    cells = list(rng.blocks(2500, 1024))
    assert cells == [(0, 0, 1024), (1, 1024, 2048), (2, 2048, 2500)]
    assert list(rng.blocks(0, 1024)) == []
