"""
cells 测试: 等值线提取与面积加权 DBSCAN
"""
import math

import numpy as np
import pytest
import shapely

from conftest import blob_grid
from src.cells import (
    PointRole, StormObject, cluster_storm_objects, detect_frame, extract_storm_objects,
    object_roles, read_cells, shoelace_area, write_cells,
)
from src.grid_io import ReflectivityGrid


def make_object(obj_id: int, x: float, y: float, area: float) -> StormObject:
    half = math.sqrt(area) / 2.0
    ring = ((x - half, y - half), (x + half, y - half), (x + half, y + half), (x - half, y + half), (x - half, y - half))
    return StormObject(obj_id, ring, area, (x, y))


def brute_force_dbscan(objects, area_limit, radius):
    """逐对距离的参考实现，返回 (角色, 分区)"""
    n = len(objects)

    def dist(a, b):
        return math.hypot(objects[a].centroid[0] - objects[b].centroid[0],
                          objects[a].centroid[1] - objects[b].centroid[1])

    core = [sum(objects[b].area_km2 for b in range(n) if dist(a, b) <= radius) >= area_limit for a in range(n)]
    label = [-1] * n
    next_label = 0
    for a in range(n):
        if not core[a] or label[a] >= 0:
            continue
        label[a] = next_label
        stack = [a]
        while stack:
            p = stack.pop()
            for q in range(n):
                if core[q] and label[q] < 0 and dist(p, q) <= radius:
                    label[q] = next_label
                    stack.append(q)
        next_label += 1

    roles = {}
    for b in range(n):
        if core[b]:
            roles[objects[b].id] = PointRole.CORE
            continue
        near = [a for a in range(n) if core[a] and dist(a, b) <= radius]
        if not near:
            roles[objects[b].id] = PointRole.NOISE
            continue
        best = min(near, key=lambda a: (dist(a, b), objects[a].centroid[0], objects[a].centroid[1]))
        label[b] = label[best]
        roles[objects[b].id] = PointRole.OUTLIER

    partition = {}
    for b in range(n):
        if label[b] >= 0:
            partition.setdefault(label[b], set()).add(objects[b].id)
    return roles, {frozenset(members) for members in partition.values()}


def _partition(cells):
    return {frozenset(cell.members) for cell in cells}


# ============================================================================
# 提取
# ============================================================================

def test_uniform_below_threshold_is_empty():
    grid = ReflectivityGrid.from_array(0, np.full((12, 12), 20.0))
    assert extract_storm_objects(grid, 35.0) == []


def test_single_block():
    data = np.zeros((20, 20))
    data[5:15, 5:15] = 45.0
    objects = extract_storm_objects(ReflectivityGrid.from_array(0, data), 35.0)
    assert len(objects) == 1
    obj = objects[0]
    assert 81.0 <= obj.area_km2 <= 121.0
    stats = obj.dbz_stats
    assert stats.max == stats.min == stats.mean == stats.median == 45.0
    assert stats.std == 0.0


def test_two_blocks_separated_by_corridor():
    data = np.zeros((20, 20))
    data[4:16, 2:8] = 45.0
    data[4:16, 10:16] = 45.0
    objects = extract_storm_objects(ReflectivityGrid.from_array(0, data), 35.0)
    assert len(objects) == 2


def test_saddle_joined_when_corner_mean_above_threshold():
    grid = ReflectivityGrid.from_array(0, np.array([[70.0, 30.0], [30.0, 70.0]]))
    objects = extract_storm_objects(grid, 35.0)
    assert len(objects) == 1
    x, y = grid.cell_centers()
    high = grid.as_array() >= 35.0
    assert shapely.contains_xy(shapely.Polygon(objects[0].polygon), x[high], y[high]).all()


def test_saddle_split_when_corner_mean_below_threshold():
    grid = ReflectivityGrid.from_array(0, np.array([[40.0, 0.0], [0.0, 40.0]]))
    objects = extract_storm_objects(grid, 35.0)
    assert len(objects) == 2
    assert not shapely.Polygon(objects[0].polygon).intersects(shapely.Polygon(objects[1].polygon))


def test_polygon_invariants_on_blobs():
    grid = blob_grid(centers=((8.0, 8.0), (22.0, 20.0)), sigma=2.5)
    values = grid.as_array()
    x, y = grid.cell_centers()
    objects = extract_storm_objects(grid, 35.0)
    assert len(objects) == 2
    for obj in objects:
        assert obj.polygon[0] == obj.polygon[-1]
        assert obj.geometry.is_valid
        assert obj.area_km2 > 0
        assert obj.area_km2 == pytest.approx(shoelace_area(obj.polygon), rel=1e-9)
        inside = shapely.contains_xy(obj.geometry, x, y)
        assert np.all(values[inside] >= 35.0)


def test_sentinel_cells_below_threshold():
    data = np.full((10, 10), -327.68, dtype=np.float32)
    grid = ReflectivityGrid.from_array(0, data)
    assert extract_storm_objects(grid, 35.0) == []


# ============================================================================
# 聚类
# ============================================================================

def test_single_large_object_is_core():
    cells = cluster_storm_objects([make_object(0, 5.0, 5.0, 25.0)], 20.0, 2.0)
    assert len(cells) == 1
    assert cells[0].point_roles == {0: PointRole.CORE}
    assert cells[0].total_area_km2 == 25.0


def test_pair_becomes_one_cell():
    objects = [make_object(0, 0.0, 0.0, 12.0), make_object(1, 1.5, 0.0, 10.0)]
    cells = cluster_storm_objects(objects, 20.0, 2.0)
    assert len(cells) == 1
    assert cells[0].members == (0, 1)
    assert set(cells[0].point_roles.values()) == {PointRole.CORE}


def test_isolated_small_object_is_noise():
    objects = [make_object(0, 0.0, 0.0, 25.0), make_object(1, 20.0, 0.0, 5.0)]
    cells = cluster_storm_objects(objects, 20.0, 2.0)
    roles = object_roles(objects, cells)
    assert roles[1] == PointRole.NOISE
    assert all(1 not in cell.members for cell in cells)


def test_outlier_joins_core_cluster():
    objects = [
        make_object(0, 0.0, 0.0, 15.0),   # A
        make_object(1, -1.5, 0.0, 6.0),   # B
        make_object(2, 1.9, 0.0, 1.0),    # D: 1 + 15 < 20
    ]
    cells = cluster_storm_objects(objects, 20.0, 2.0)
    assert len(cells) == 1
    assert cells[0].point_roles == {0: PointRole.CORE, 1: PointRole.CORE, 2: PointRole.OUTLIER}
    assert cells[0].total_area_km2 == pytest.approx(22.0)


def test_centroid_is_area_weighted():
    objects = [make_object(0, 0.0, 0.0, 15.0), make_object(1, 1.0, 0.0, 5.0)]
    cell = cluster_storm_objects(objects, 20.0, 2.0)[0]
    assert cell.centroid == pytest.approx((0.25, 0.0))


def _random_objects(rng, n):
    return [make_object(i, float(rng.uniform(0, 12)), float(rng.uniform(0, 12)), float(rng.uniform(0.5, 15.0)))
            for i in range(n)]


def test_matches_brute_force_oracle(rng):
    mismatches = 0
    for _ in range(200):
        objects = _random_objects(rng, int(rng.integers(0, 51)))
        cells = cluster_storm_objects(objects, 20.0, 2.0)
        roles, partition = brute_force_dbscan(objects, 20.0, 2.0)
        if object_roles(objects, cells) != roles or _partition(cells) != partition:
            mismatches += 1
    assert mismatches == 0


def test_permutation_invariance(rng):
    for _ in range(20):
        objects = _random_objects(rng, 30)
        cells = cluster_storm_objects(objects, 20.0, 2.0)
        shuffled = [objects[i] for i in rng.permutation(len(objects))]
        cells_shuffled = cluster_storm_objects(shuffled, 20.0, 2.0)
        assert _partition(cells) == _partition(cells_shuffled)
        assert object_roles(objects, cells) == object_roles(shuffled, cells_shuffled)
        assert [c.members for c in cells] == [c.members for c in cells_shuffled]


def test_raising_area_limit_never_adds_cores(rng):
    for _ in range(20):
        objects = _random_objects(rng, 30)
        low = object_roles(objects, cluster_storm_objects(objects, 15.0, 2.0))
        high = object_roles(objects, cluster_storm_objects(objects, 25.0, 2.0))
        for obj_id, role in high.items():
            if role == PointRole.CORE:
                assert low[obj_id] == PointRole.CORE


def test_every_object_gets_one_role(rng):
    objects = _random_objects(rng, 40)
    cells = cluster_storm_objects(objects, 20.0, 2.0)
    members = [m for cell in cells for m in cell.members]
    assert len(members) == len(set(members))
    noise = {i for i, role in object_roles(objects, cells).items() if role == PointRole.NOISE}
    assert set(members) | noise == {obj.id for obj in objects}
    assert not set(members) & noise


# ============================================================================
# 记录格式
# ============================================================================

def test_write_read_cells(tmp_path):
    grid = blob_grid(timestamp=600, centers=((8.0, 8.0), (24.0, 24.0)))
    objects, cells = detect_frame(grid, 35.0, 20.0, 2.0)
    path = tmp_path / "600.cells"
    write_cells(objects, cells, path)
    objects2, cells2 = read_cells(path, grid)
    assert [o.id for o in objects2] == [o.id for o in objects]
    assert [c.members for c in cells2] == [c.members for c in cells]
    assert [c.point_roles for c in cells2] == [c.point_roles for c in cells]
    for a, b in zip(cells, cells2):
        assert b.timestamp == 600
        assert b.total_area_km2 == pytest.approx(a.total_area_km2, abs=1e-4)
    for line in path.read_text().splitlines():
        assert "POLYGON((" in line
