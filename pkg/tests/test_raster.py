import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from densgeo.errors import GridParseError, GridRangeError
from densgeo.raster import (DensityGrid, GridSpec, binarize, dice, load_grid, save_grid,
                            volume_fraction)

shapes = st.tuples(st.integers(1, 12), st.integers(1, 12))


@st.composite
def grids(draw, shape=None, binary=False):
    ny, nx = shape if shape is not None else draw(shapes)
    if binary:
        vals = draw(arrays(np.float64, (ny, nx), elements=st.sampled_from([0.0, 1.0])))
    else:
        vals = draw(arrays(np.float64, (ny, nx), elements=st.floats(0, 1)))
    return DensityGrid(GridSpec(nx, ny), vals)


@st.composite
def grid_pairs(draw, binary=False):
    shape = draw(shapes)
    return draw(grids(shape, binary)), draw(grids(shape, binary))


def test_pixel_center_convention():
    spec = GridSpec(4, 2, w=2.0, h=1.0)
    x, y = spec.pixel_center(0, 0)
    assert (x, y) == pytest.approx((0.25, 0.75))
    x, y = spec.pixel_center(3, 1)
    assert (x, y) == pytest.approx((1.75, 0.25))


@given(st.integers(1, 50), st.integers(1, 50), st.floats(0.1, 10), st.floats(0.1, 10))
def test_pixel_center_round_trip(nx, ny, w, h):
    spec = GridSpec(nx, ny, w, h)
    jj, ii = np.mgrid[0:ny, 0:nx]
    i2, j2 = spec.pixel_of(*spec.pixel_center(ii, jj))
    assert np.allclose(i2, ii, atol=1e-9) and np.allclose(j2, jj, atol=1e-9)


@pytest.mark.parametrize("kw", [dict(nx=0, ny=3), dict(nx=3, ny=3, w=0.0), dict(nx=3, ny=3, h=-1.0)])
def test_gridspec_rejects_bad_dims(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_density_grid_validates():
    spec = GridSpec(2, 2)
    with pytest.raises(GridRangeError):
        DensityGrid(spec, [[0, 1.5], [0, 0]])
    with pytest.raises(ValueError):
        DensityGrid(spec, [0, 1, 0])
    g = DensityGrid(spec, [[0, 1], [0.5, 0.25]])
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_p2_pgm_normalised(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# comment\n2 2\n255\n255 0\n0 255\n")
    g = load_grid(p)
    assert np.array_equal(g.values, [[1, 0], [0, 1]])
    assert (g.spec.w, g.spec.h) == (1.0, 1.0)


def test_pgm_default_extents(tmp_path):
    p = tmp_path / "a.pgm"
    save_grid(DensityGrid.zeros(GridSpec(4, 2)), p)
    g = load_grid(p)
    assert (g.spec.w, g.spec.h) == (1.0, 0.5)
    assert load_grid(p, w=3.0, h=2.0).spec.w == 3.0


def test_csv_load(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.5,0.25\n1.0,0.0\n")
    assert np.array_equal(load_grid(p).values, [[0.5, 0.25], [1.0, 0.0]])


@pytest.mark.parametrize("text,match", [
    ("P2\n2 x\n255\n0 0 0 0\n", "byte offset"),
    ("P2\n2 2\n255\n0 0 0\n", "expected 4"),
    ("P2\n2 2\n255\n0 0\n0 zz\n", "line 5"),
    ("P7\n2 2\n255\n", "magic"),
])
def test_pgm_parse_errors(tmp_path, text, match):
    p = tmp_path / "bad.pgm"
    p.write_text(text)
    with pytest.raises(GridParseError, match=match):
        load_grid(p)


def test_p5_truncated(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n3 3\n255\n" + bytes(4))
    with pytest.raises(GridParseError, match="truncated"):
        load_grid(p)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0.5,1.5\n")
    with pytest.raises(GridRangeError, match="line 1"):
        load_grid(p)
    p.write_text("0.5,0.5\n0.5\n")
    with pytest.raises(GridParseError, match="line 2"):
        load_grid(p)


def test_save_errors_name_path(tmp_path):
    target = tmp_path / "missing" / "x.pgm"
    with pytest.raises(OSError, match="missing"):
        save_grid(DensityGrid.zeros(GridSpec(2, 2)), target)


def test_pgm_extremes(tmp_path):
    spec = GridSpec(3, 2)
    for grid, byte in ((DensityGrid.zeros(spec), 0), (DensityGrid.ones(spec), 255)):
        p = tmp_path / "x.pgm"
        save_grid(grid, p)
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n3 2\n255\n")
        assert set(raw[-6:]) == {byte}


@given(grids())
def test_pgm_round_trip(tmp_path_factory, g):
    p = tmp_path_factory.mktemp("pgm") / "g.pgm"
    save_grid(g, p)
    back = load_grid(p, w=g.spec.w, h=g.spec.h)
    assert np.abs(back.values - g.values).max() <= 0.5 / 255 + 1e-12


@given(grids())
def test_csv_round_trip_exact(tmp_path_factory, g):
    p = tmp_path_factory.mktemp("csv") / "g.csv"
    save_grid(g, p)
    assert np.array_equal(load_grid(p).values, g.values)


def test_binarize_rule():
    g = DensityGrid(GridSpec(2, 1), [[0.10, 0.11]])
    assert np.array_equal(binarize(g, 0.1).values, [[0.0, 1.0]])
    with pytest.raises(ValueError):
        binarize(g, 1.5)


@given(grids(), st.floats(0, 1))
def test_binarize_idempotent_and_binary(g, tau):
    b = binarize(g, tau)
    assert b.is_binary()
    assert binarize(b, tau) == b


@given(grids(), st.floats(0, 1), st.floats(0, 1))
def test_volume_monotone_in_threshold(g, t1, t2):
    lo, hi = sorted((t1, t2))
    assert volume_fraction(binarize(g, hi)) <= volume_fraction(binarize(g, lo))


def test_dice_examples():
    spec = GridSpec(10, 10)
    ones = DensityGrid.ones(spec)
    half = np.zeros((10, 10))
    half[:, :5] = 1
    half = DensityGrid(spec, half)
    assert dice(ones, half) == pytest.approx(2 / 3)
    assert dice(half, DensityGrid(spec, 1 - half.values)) == 0.0
    assert dice(DensityGrid.zeros(spec), DensityGrid.zeros(spec)) == 1.0
    with pytest.raises(ValueError):
        dice(ones, DensityGrid.ones(GridSpec(5, 5)))


@given(grid_pairs())
def test_dice_symmetric_and_bounded(pair):
    a, b = pair
    d = dice(a, b)
    assert d == pytest.approx(dice(b, a), abs=1e-15)
    assert 0.0 <= d <= 1.0 + 1e-12


@given(grid_pairs(binary=True))
def test_dice_one_iff_equal_binary(pair):
    a, b = pair
    assert (dice(a, b) == 1.0) == (a == b)


def test_volume_fraction_examples():
    spec = GridSpec(10, 10)
    v = np.zeros((10, 10))
    v[:5] = 1
    assert volume_fraction(DensityGrid.ones(spec)) == 1.0
    assert volume_fraction(DensityGrid.zeros(spec)) == 0.0
    assert volume_fraction(DensityGrid(spec, v)) == 0.5
