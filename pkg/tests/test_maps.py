import numpy as np
import pytest

from hevdp.maps import GridMap, MapFileError, read_battery_curves, read_grid_map, write_grid_map


def test_bilinear_and_nan_outside():
    m = GridMap([0.0, 10.0], [0.0, 1.0], [[0.0, 10.0], [1.0, 11.0]])
    assert float(m(5.0, 0.5)) == pytest.approx(5.5)
    assert np.isnan(float(m(11.0, 0.5)))


def test_grid_map_round_trip(tmp_path):
    m = GridMap([100.0, 200.0, 300.0], [0.0, 40.0], [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    write_grid_map(m, tmp_path / "m.csv")
    back = read_grid_map(tmp_path / "m.csv", scale=2.0)
    np.testing.assert_array_equal(back.values, 2.0 * m.values)
    np.testing.assert_array_equal(back.speeds, m.speeds)


def test_bad_map_files(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text(",1,2\n0,1\n1,1,2\n")
    with pytest.raises(MapFileError, match=":2"):
        read_grid_map(f)
    with pytest.raises(MapFileError):
        GridMap([2.0, 1.0], [0.0, 1.0], np.zeros((2, 2)))


def test_battery_curves(tmp_path):
    f = tmp_path / "b.csv"
    f.write_text("soc,voc_V,r0_ohm\n0.8,300,0.09\n0.3,280,0.12\n")
    soc, voc, r0 = read_battery_curves(f)
    np.testing.assert_array_equal(soc, [0.3, 0.8])
    np.testing.assert_array_equal(voc, [280, 300])
    f.write_text("soc,voc_V,r0_ohm\n0.3,x,0.1\n")
    with pytest.raises(MapFileError):
        read_battery_curves(f)
