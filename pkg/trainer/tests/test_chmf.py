from __future__ import annotations

import numpy as np
import pytest

from canopy_trainer.chmf import Grid, UNITS_RELATIVE, read_chmf, write_chmf

from conftest import run_bench


class TestChmfCodec:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        values = rng.uniform(-5, 25, size=(7, 9)).astype(np.float32)
        values[2, 3] = np.nan
        grid = Grid(values=values, pixel_size=0.5, origin=(12.0, -3.0), units=UNITS_RELATIVE)
        path = tmp_path / "g.chmf"
        write_chmf(grid, path)
        back = read_chmf(path)
        assert np.array_equal(back.values, values, equal_nan=True)
        assert back.pixel_size == np.float32(0.5)
        assert back.origin == (12.0, -3.0)
        assert back.units == UNITS_RELATIVE

    def test_sentinel_nodata(self, tmp_path):
        values = np.array([[1.0, -9999.0]], dtype=np.float32)
        path = tmp_path / "s.chmf"
        write_chmf(Grid(values=values, nodata=-9999.0), path)
        back = read_chmf(path)
        assert np.isnan(back.values[0, 1])

    def test_rejects_non_chmf(self, tmp_path):
        path = tmp_path / "junk.chmf"
        path.write_bytes(b"not a raster")
        with pytest.raises(ValueError):
            read_chmf(path)

    def test_reads_toolkit_output(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(
            '{"size": 32, "pixel_size": 1.0, '
            '"terrain": {"base_elevation": 90, "relief_amplitude": 5, "seed": 2}, '
            '"crowns": [{"center": [16, 16], "radius": 6, "height": 11}], '
            '"noise_sigma": 0.0}'
        )
        proc = run_bench("synth", "--out-dir", str(tmp_path), "--scene-id", "interop", "--spec", str(spec))
        assert proc.returncode == 0, proc.stderr
        grid = read_chmf(tmp_path / "interop_chm.chmf")
        assert grid.values.shape == (32, 32)
        assert float(np.nanmax(grid.values)) == pytest.approx(11.0, abs=1e-3)
        assert grid.units == 0  # meters
