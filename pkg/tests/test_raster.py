import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from gogsim.raster import fill_polygon, raster_triangle


def _inside_convex(poly, x, y):
    p = np.asarray(poly, float)
    s = []
    for k in range(len(p)):
        a, b = p[k], p[(k + 1) % len(p)]
        s.append((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]))
    s = np.array(s)
    return bool(np.all(s > 0) or np.all(s < 0))


def test_axis_aligned_rectangle_fills_exact_pixels():
    bits = np.zeros((10, 10), bool)
    fill_polygon(bits, [(2, 3), (7, 3), (7, 6), (2, 6)])
    expect = np.zeros((10, 10), bool)
    expect[3:6, 2:7] = True
    assert np.array_equal(bits, expect)


def test_polygon_partly_outside_is_clipped():
    bits = np.zeros((4, 4), bool)
    fill_polygon(bits, [(-5, -5), (2, -5), (2, 10), (-5, 10)])
    assert bits[:, :2].all() and not bits[:, 2:].any()


pts = st.tuples(st.floats(0.3, 19.7), st.floats(0.3, 19.7))


@given(pts, pts, pts)
def test_triangle_matches_centre_sampling(a, b, c):
    tri = [a, b, c]
    area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    bits = np.zeros((20, 20), bool)
    fill_polygon(bits, tri)
    jj, ii, bary = raster_triangle(np.array([[*a, 0], [*b, 0], [*c, 0]]), (20, 20))
    tri_bits = np.zeros((20, 20), bool)
    tri_bits[jj, ii] = True
    if area < 1e-6:
        assert not tri_bits.any()
        return
    if len(bary):
        assert np.allclose(bary.sum(axis=1), 1.0)
    # centres clear of every edge agree with both rasterisers; ties on an edge may go either way
    for j in range(20):
        for i in range(20):
            x, y = i + 0.5, j + 0.5
            dist = min(
                abs((q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0])) / max(np.hypot(q[0] - p[0], q[1] - p[1]), 1e-12)
                for p, q in ((a, b), (b, c), (c, a))
            )
            if dist <= 1e-6:
                continue
            inside = _inside_convex(tri, x, y)
            assert bits[j, i] == inside and tri_bits[j, i] == inside
