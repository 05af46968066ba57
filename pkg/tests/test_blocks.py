import math

import numpy as np
import pytest

from asiplab.blocks import LOG3, BlockScheme, block_index, clip_center
from asiplab.errors import InvalidInputError


def test_block_index_boundaries():
    assert block_index(3) == 1
    assert block_index(4) == 2
    assert block_index(27) == 3
    assert block_index(28) == 4
    assert block_index(2) == 1
    assert block_index(9) == 2
    assert block_index(10) == 3


def test_block_index_consistent_with_powers():
    for n in range(2, 3**9 + 2):
        h = block_index(n)
        assert 3 ** (h - 1) < n <= 3**h


def test_block_index_rejects_small_n():
    with pytest.raises(InvalidInputError):
        block_index(1)


def test_scheme_power_identity():
    # 3^k = exp((M_k/b)^gamma2 / 2) holds to 1e-10 relative for k <= 20
    for g1, g2, c, b in [(1.0, 2.0, math.log(2), 1.633), (0.5, 1.0, 0.3, 2.0)]:
        scheme = BlockScheme(g1, g2, c, b)
        for k in range(1, 21):
            lhs = 3.0**k
            rhs = math.exp(0.5 * (scheme.clip_level(k) / b) ** g2)
            assert abs(lhs - rhs) <= 1e-10 * lhs


def test_scheme_lag_constant_identity():
    for g1, c in [(1.0, math.log(2)), (0.5, 0.3), (2.0, 1.7)]:
        scheme = BlockScheme(g1, 2.0, c, 1.0)
        assert c * scheme.c2**g1 >= 2 * LOG3 - 1e-12
        assert c * scheme.c2**g1 == pytest.approx(2 * LOG3, rel=1e-12)


def test_scheme_alpha():
    assert BlockScheme(1.0, 2.0, 1.0, 1.0).alpha == pytest.approx(2.5)
    assert BlockScheme(0.5, math.inf, 1.0, 1.0).alpha == pytest.approx(3.0)


def test_scheme_bounded_case_clip_inactive():
    scheme = BlockScheme(1.0, math.inf, 1.0, 5.0)
    for k in (1, 3, 10, 50):
        assert scheme.clip_level(k) == 5.0


def test_scheme_block_ranges_partition():
    scheme = BlockScheme(1.0, 2.0, 1.0, 1.0)
    prev_end = 1
    for k in range(1, 10):
        lo, hi = scheme.block_range(k)
        assert lo == prev_end + 1
        prev_end = hi


def test_scheme_k0_definition():
    for scheme in [
        BlockScheme(1.0, 2.0, math.log(2), 1.633),
        BlockScheme(0.5, 1.0, 0.25, 1.0),
        BlockScheme(2.0, math.inf, 4.0, 1.0),
    ]:
        k0 = scheme.k0()
        for ell in range(k0, k0 + 30):
            assert scheme.lag(ell) <= 3 ** (ell - 1)
        if k0 > 1:
            assert scheme.lag(k0 - 1) > 3 ** (k0 - 2)


def test_clip_center_inactive_within_level():
    scheme = BlockScheme(1.0, 2.0, 1.0, 1.0)
    m = scheme.clip_level(3)
    xs = np.linspace(-m, m, 7)
    assert np.array_equal(clip_center(xs, 3, scheme, 0.0), xs)


def test_clip_center_saturates():
    scheme = BlockScheme(1.0, 2.0, 1.0, 1.0)
    m = scheme.clip_level(2)
    assert clip_center(10 * m, 2, scheme, 0.0) == pytest.approx(m)
    assert clip_center(-10 * m, 2, scheme, 0.0) == pytest.approx(-m)


def test_clip_center_unit_scale_level():
    # b = 1, gamma2 = 1 gives M_1 = 2 log 3
    scheme = BlockScheme(1.0, 1.0, 1.0, 1.0)
    assert scheme.clip_level(1) == pytest.approx(2 * LOG3)
    assert clip_center(3.0, 1, scheme, 0.0) == pytest.approx(2 * LOG3)


def test_clip_center_output_range():
    scheme = BlockScheme(1.0, 2.0, 1.0, 1.0)
    mu = 0.3
    xs = np.random.default_rng(0).normal(0, 5, 1000)
    out = clip_center(xs, 2, scheme, mu)
    m = scheme.clip_level(2)
    assert np.all(out >= -m - abs(mu) - 1e-12)
    assert np.all(out <= m + abs(mu) + 1e-12)
