import math

import numpy as np
import pytest

from neei.geomworld import ConvexPolygon
from neei.nfchan import ArrayGeometry
from neei.oracles import (
    max_phase_error,
    phase_error_sweep,
    random_convex_polygon,
    rayleigh_table,
    sample_boundary,
    sampled_distance,
)


def test_random_polygons_are_valid_and_sized():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = random_convex_polygon(rng, (1.0, -1.0), 0.5)
        assert 3 <= len(p.vertices) <= 9
        assert np.all(np.hypot(*(p.vertices - [1.0, -1.0]).T) <= 0.5 + 1e-12)


def test_boundary_samples_lie_on_edges():
    sq = ConvexPolygon.rectangle(0.0, 0.0, 2.0, 2.0)
    pts = sample_boundary(sq, 400)
    on_edge = np.isclose(np.abs(pts).max(axis=1), 1.0, atol=1e-12)
    assert on_edge.all()
    np.testing.assert_allclose(pts[0], sq.vertices[0])


def test_sampled_distance_cases():
    a = ConvexPolygon.rectangle(0.0, 0.0, 1.0, 1.0)
    assert sampled_distance(a, ConvexPolygon.rectangle(0.5, 0.5, 1.0, 1.0), 500) == 0.0
    assert sampled_distance(a, ConvexPolygon.rectangle(3.0, 0.0, 1.0, 1.0), 500) == pytest.approx(2.0, abs=1e-9)
    # containment without boundary crossing still reads as touching
    assert sampled_distance(ConvexPolygon.rectangle(0, 0, 4, 4), a, 500) == 0.0


def test_rayleigh_table_rows():
    big, small = rayleigh_table()
    assert big.rayleigh == pytest.approx(2040.19, abs=0.01)
    assert small.rayleigh == pytest.approx(96.03, abs=0.01)
    assert big.aperture == pytest.approx(639 * big.wavelength / 2)


def test_phase_error_sweep_golden():
    g = ArrayGeometry(640, 30e9, axis=(1.0, 0.0))
    d = [2.0] + [k * g.aperture for k in (10, 100, 1000)]
    errs = [e for _, e in phase_error_sweep(g, d)]
    np.testing.assert_allclose(errs, [396, 19.3, 1.89, 0.188], rtol=0.01)
    # beyond ten apertures each decade cuts the error tenfold
    assert errs[1] / errs[2] == pytest.approx(10.0, rel=0.05)
    assert max_phase_error(g, (0.0, 2.0)) == pytest.approx(351, rel=0.01)


def test_phase_error_zero_for_single_element():
    assert max_phase_error(ArrayGeometry(1, 30e9), (1.0, 1.0)) == pytest.approx(0.0, abs=1e-9)
    assert not math.isnan(max_phase_error(ArrayGeometry(2, 30e9), (0.0, 1.0)))
