import numpy as np
import pytest

from dicrack import validation as V
from dicrack.errors import ConfigError
from dicrack.image import GrayImage
from dicrack.rgdic import RoiGrid


def test_check_positive():
    assert V.check_positive("2.5", "x") == 2.5
    assert V.check_positive(0, "x", allow_zero=True) == 0.0
    for bad in (0, -1, "nan", "inf", "abc", None):
        with pytest.raises(ConfigError):
            V.check_positive(bad, "x")


def test_check_int():
    assert V.check_int("4", "n") == 4 and V.check_int(4.0, "n") == 4
    with pytest.raises(ConfigError):
        V.check_int(2.5, "n")
    with pytest.raises(ConfigError):
        V.check_int("x", "n")
    with pytest.raises(ConfigError, match=">= 1"):
        V.check_int(0, "n", minimum=1)


def test_choices():
    assert V.check_orientation("horizontal") == "horizontal"
    assert V.check_growth("positive") == "positive"
    with pytest.raises(ConfigError):
        V.check_orientation("up")
    with pytest.raises(ConfigError):
        V.check_growth("sideways")


def test_check_frames():
    a = GrayImage(np.zeros((8, 8)))
    assert len(V.check_frames([a, np.ones((8, 8))])) == 2
    with pytest.raises(ConfigError):
        V.check_frames([a])
    with pytest.raises(ConfigError):
        V.check_frames([a, np.zeros((8, 9))])
    with pytest.raises(ConfigError):
        V.check_frames([a, np.full((8, 8), 3.0)])


def test_check_roi_and_seeds():
    g = RoiGrid(13, 13, 64, 64, 8)
    assert V.check_roi(g, 100, 100, 11) is g
    with pytest.raises(ConfigError, match="leave"):
        V.check_roi(g, 80, 100, 11)
    assert V.check_seeds([(20, 20)], g) == [(20.0, 20.0)]
    with pytest.raises(ConfigError):
        V.check_seeds([(5, 20)], g)
    with pytest.raises(ConfigError):
        V.check_seeds([], g)


def test_timestamps():
    np.testing.assert_array_equal(V.check_timestamps([0, 1, 3], 3), [0, 1, 3])
    for bad in ([0, 0], [1, 0], [0, np.nan]):
        with pytest.raises(ConfigError):
            V.check_timestamps(bad)


def test_step_rule():
    # subset size 2M+1 = 23; a sixth of it is 3.83 px
    assert not V.step_too_coarse(2, 11) and not V.step_too_coarse(3, 11)
    assert V.step_too_coarse(4, 11) and V.step_too_coarse(12, 11)


def test_default_roi():
    g = V.default_roi(100, 80, 11, 4)
    assert (g.x, g.y, g.width, g.height) == (13, 13, 74, 54)
    assert g.fits(100, 80, 11)
    with pytest.raises(ConfigError):
        V.default_roi(20, 20, 11, 4)
