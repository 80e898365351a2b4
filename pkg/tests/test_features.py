"""
features 测试: 特征构建、最近站点关联与损害标注
"""
import math

import numpy as np
import pytest

from src.cells import PointRole, StormCell, StormObject, detect_frame
from src.dataset import FEATURE_NAMES, LabeledSample
from src.features import (
    DamageClass, GroundObservation, Outage, Strike, Transformer, TransformerSet,
    build_samples, featurize, filter_complete, label_cell, nearest_observation,
    read_observations, read_transformers, write_observations, write_transformers,
)
from src.grid_io import ReflectivityGrid
from src.tracking import Track, TrackObservation

TS = 3000


def square_cell(x, y, area, timestamp=TS, cell_id=0):
    half = math.sqrt(area) / 2.0
    ring = ((x - half, y - half), (x + half, y - half), (x + half, y + half), (x - half, y + half), (x - half, y - half))
    obj = StormObject(0, ring, area, (x, y))
    return StormCell(cell_id, (0,), {0: PointRole.CORE}, area, (x, y), timestamp, (obj,))


def flat_grid(value=40.0, size=20, timestamp=TS):
    return ReflectivityGrid.from_array(timestamp, np.full((size, size), value))


def transformers_in_square(grid, x, y, n, out=0, start=TS + 10):
    """在 (x, y) 附近放 n 个变压器，前 out 个在 start 后停电"""
    xs = x + np.linspace(-1.0, 1.0, n)
    lat, lon = grid.to_latlon(xs, np.full(n, y))
    positions = [Transformer(i, float(lat[i]), float(lon[i])) for i in range(n)]
    outages = [Outage(i, start, start + 60) for i in range(out)]
    return TransformerSet(positions, outages)


# ============================================================================
# 特征
# ============================================================================

def test_uniform_region_stats():
    data = np.zeros((20, 20))
    data[4:16, 4:16] = 40.0
    grid = ReflectivityGrid.from_array(TS, data)
    _, cells = detect_frame(grid, 35.0, 20.0, 2.0)
    fv = featurize(cells[0], None, grid, [], [])
    assert fv.max_dbz == fv.min_dbz == fv.mean_dbz == fv.median_dbz == 40.0
    assert fv.std_dbz == 0.0
    assert fv.age_seconds == 0.0


def test_no_stations_zero_fills_ground_fields():
    grid = flat_grid()
    fv = featurize(square_cell(10.0, 10.0, 20.0), None, grid, [], [])
    for name in ("temperature_c", "pressure_hpa", "wind_speed_ms", "wind_dir_deg", "precip_mm", "snow_depth_cm"):
        assert getattr(fv, name) == 0.0
    assert fv.missing_mask == tuple(i >= 10 for i in range(16))
    assert fv.mask == 0xFC00


def test_lightning_density():
    grid = flat_grid()
    cell = square_cell(10.0, 10.0, 20.0)
    inside = [grid.to_latlon(10.0 + 0.2 * k, 10.0) for k in range(-4, 4)]
    strikes = [Strike(lat, lon, TS - 100) for lat, lon in inside]
    strikes.append(Strike(*inside[0], TS - 400))                 # 窗口外
    strikes.append(Strike(*grid.to_latlon(2.0, 2.0), TS - 10))   # 多边形外
    fv = featurize(cell, None, grid, strikes, [])
    assert fv.lightning_density_per_km2 == pytest.approx(0.4)


def test_age_and_latlon_from_track():
    grid = flat_grid()
    cell = square_cell(10.0, 10.0, 20.0)
    track = Track(4, (TrackObservation(TS - 600, 2, (8.0, 10.0)), TrackObservation(TS - 300, 1, (9.0, 10.0)),
                      TrackObservation(TS, 0, (10.0, 10.0))))
    fv = featurize(cell, track, grid, [], [])
    assert fv.age_seconds == 600.0
    assert (fv.lat, fv.lon) == pytest.approx(grid.to_latlon(10.0, 10.0))


def test_ground_fields_from_nearest_station():
    grid = flat_grid()
    lat, lon = grid.to_latlon(10.0, 10.0)
    far_lat, far_lon = grid.to_latlon(19.0, 19.0)
    obs = [
        GroundObservation(0, far_lat, far_lon, TS, temperature_c=1.0),
        GroundObservation(1, lat, lon, TS - 300, temperature_c=12.0, wind_dir_deg=90.0),
        GroundObservation(1, lat, lon, TS, temperature_c=14.0, pressure_hpa=1001.0),
    ]
    fv = featurize(square_cell(10.0, 10.0, 20.0), None, grid, [], obs)
    assert fv.temperature_c == 14.0
    assert fv.pressure_hpa == 1001.0
    assert fv.wind_dir_deg == 0.0
    assert fv.missing_mask[FEATURE_NAMES.index("wind_dir_deg")]
    assert not fv.missing_mask[FEATURE_NAMES.index("temperature_c")]
    assert all(math.isfinite(v) for v in fv.values())


def test_nearest_observation_ties():
    obs = [
        GroundObservation(5, 60.0, 25.0, 100),
        GroundObservation(2, 60.0, 25.0, 500),
        GroundObservation(2, 60.0, 25.0, 100),
    ]
    chosen = nearest_observation(obs, 60.0, 25.0, 300)
    assert chosen.station_id == 2
    assert chosen.timestamp == 100
    assert nearest_observation([], 60.0, 25.0, 0) is None


def test_nearest_observation_prefers_closest_time_even_if_later():
    obs = [GroundObservation(1, 60.0, 25.0, 100), GroundObservation(1, 60.0, 25.0, 320)]
    assert nearest_observation(obs, 60.0, 25.0, 300).timestamp == 320


def test_wind_direction_range():
    with pytest.raises(ValueError):
        GroundObservation(0, 60.0, 25.0, 0, wind_dir_deg=360.0)


# ============================================================================
# 标注
# ============================================================================

@pytest.mark.parametrize("out, expected", [(0, 0), (1, 1), (5, 2), (9, 3)])
def test_label_cell_classes(out, expected):
    grid = flat_grid()
    transformers = transformers_in_square(grid, 10.0, 10.0, 10, out)
    assert label_cell(square_cell(10.0, 10.0, 20.0), transformers, TS, 300, grid=grid) == expected


def test_unlabelable_cell():
    grid = flat_grid()
    transformers = transformers_in_square(grid, 3.0, 3.0, 5, 5)
    assert label_cell(square_cell(15.0, 15.0, 20.0), transformers, TS, 300, grid=grid) is None


def test_outage_outside_window_ignored():
    grid = flat_grid()
    transformers = transformers_in_square(grid, 10.0, 10.0, 10, 10, start=TS + 400)
    assert label_cell(square_cell(10.0, 10.0, 20.0), transformers, TS, 300, grid=grid) == DamageClass.NONE


def test_label_is_monotone(rng):
    grid = flat_grid()
    cell = square_cell(10.0, 10.0, 20.0)
    base = transformers_in_square(grid, 10.0, 10.0, 12)
    previous = DamageClass.NONE
    outages = []
    for tid in rng.permutation(12):
        outages.append(Outage(int(tid), TS + 5, TS + 50))
        label = label_cell(cell, TransformerSet(base.transformers, outages), TS, 300, grid=grid)
        assert label >= previous
        previous = label
    assert previous == DamageClass.SEVERE


def test_share_boundaries():
    assert DamageClass.from_share(0.0) == 0
    assert DamageClass.from_share(1e-9) == 1
    assert DamageClass.from_share(0.10) == 1
    assert DamageClass.from_share(0.100001) == 2
    assert DamageClass.from_share(0.50) == 2
    assert DamageClass.from_share(0.5000001) == 3
    assert DamageClass.from_share(1.0) == 3
    for share in np.linspace(0.0, 1.0, 101):
        assert DamageClass.from_share(float(share)) in (0, 1, 2, 3)


def test_transformer_set_validation():
    with pytest.raises(ValueError):
        TransformerSet([Transformer(0, 60.0, 25.0), Transformer(0, 60.1, 25.0)])
    with pytest.raises(ValueError):
        TransformerSet([Transformer(0, 60.0, 25.0)], [Outage(0, 10, 5)])


# ============================================================================
# 过滤与样本
# ============================================================================

def _sample(mask):
    return LabeledSample(tuple(float(mask) for _ in range(16)), 0, mask)


def test_filter_complete():
    complete = [_sample(0) for _ in range(3)]
    assert filter_complete(complete) == complete
    assert filter_complete([_sample(1), _sample(4)]) == []
    mixed = [_sample(0), _sample(3), _sample(0), _sample(8), _sample(0)]
    kept = filter_complete(mixed)
    assert len(kept) == 3
    assert kept == [mixed[0], mixed[2], mixed[4]]


def test_build_samples_skips_unlabelable():
    grid = flat_grid(size=30)
    labeled = square_cell(8.0, 8.0, 20.0, cell_id=0)
    bare = square_cell(22.0, 22.0, 20.0, cell_id=1)
    transformers = transformers_in_square(grid, 8.0, 8.0, 10, 2)
    samples = build_samples([bare, labeled], {}, grid, [], [], transformers, 300)
    assert len(samples) == 1
    assert samples[0].cell_id == 0
    assert samples[0].label == DamageClass.MODERATE
    assert samples[0].track_id == -1


# ============================================================================
# 行记录
# ============================================================================

def test_observation_records_keep_absent_values(tmp_path):
    obs = [GroundObservation(3, 60.25, 25.5, 900, temperature_c=11.5, snow_depth_cm=0.0)]
    path = tmp_path / "observations.txt"
    write_observations(obs, path)
    assert " - " in path.read_text()
    assert read_observations(path) == obs


def test_transformer_records(tmp_path):
    transformers = TransformerSet([Transformer(0, 60.0, 25.0), Transformer(1, 60.01, 25.02)], [Outage(1, 10, 70)])
    path = tmp_path / "transformers.txt"
    write_transformers(transformers, path)
    loaded = read_transformers(path)
    assert loaded.transformers == transformers.transformers
    assert loaded.outages == transformers.outages
    assert loaded.is_out(1, 0, 10)
    assert not loaded.is_out(0, 0, 100)
