"""
Storm Cells - 35 dBZ 等值线风暴对象提取与面积加权 DBSCAN 聚类
"""
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from src.config import THRESHOLD_DBZ, AREA_LIMIT_KM2, RADIUS_KM
from src.grid_io import ReflectivityGrid

Point = Tuple[float, float]

# 角点: 0=TL 1=TR 2=BR 3=BL; 边: top/right/bottom/left
_CORNER_EDGES = {0: ("top", "left"), 1: ("top", "right"), 2: ("right", "bottom"), 3: ("bottom", "left")}


class PointRole(str, Enum):
    """DBSCAN 点角色"""

    CORE = "core"
    OUTLIER = "outlier"
    NOISE = "noise"


@dataclass(frozen=True)
class DbzStats:
    """多边形内单元中心的反射率统计"""

    max: float
    min: float
    mean: float
    median: float
    std: float


@dataclass(frozen=True)
class StormObject:
    """一个闭合 35 dBZ 等值线多边形"""

    id: int
    polygon: Tuple[Point, ...]
    area_km2: float
    centroid: Point
    dbz_stats: Optional[DbzStats] = None

    @property
    def geometry(self) -> Polygon:
        return Polygon(self.polygon)


@dataclass(frozen=True)
class StormCell:
    """风暴对象的 DBSCAN 簇"""

    cell_id: int
    members: Tuple[int, ...]
    point_roles: Dict[int, PointRole]
    total_area_km2: float
    centroid: Point
    timestamp: int = 0
    member_objects: Tuple[StormObject, ...] = field(default=(), repr=False, compare=False)

    @property
    def geometry(self):
        """成员多边形并集"""
        return unary_union([obj.geometry for obj in self.member_objects])


# ============================================================================
# 等值线提取 (marching squares)
# ============================================================================

def shoelace_area(ring) -> float:
    """鞋带公式有向面积，逆时针为正"""
    pts = np.asarray(ring, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]) + x[-1] * y[0] - x[0] * y[-1])


class MarchingSquares:
    """
    阈值等值线追踪

    网格四周补一圈低值，保证所有等值线闭合；线段定向使高于阈值的区域
    位于行进方向左侧，于是外边界为逆时针、洞为顺时针。
    """

    def __init__(self, data: np.ndarray, threshold: float, cell_size_km: float = 1.0):
        """
        初始化

        Args:
            data: rows×cols 数组，第一行为最北一行，无哨兵
            threshold: 阈值
            cell_size_km: 网格间距 (km)
        """
        self.rows, self.cols = data.shape
        self.threshold = float(threshold)
        self.cs = float(cell_size_km)
        low = min(float(np.min(data)), self.threshold) - 1.0
        self.field = np.pad(data.astype(np.float64), 1, mode="constant", constant_values=low)
        self.above = self.field >= self.threshold

    def _node_xy(self, i: int, j: int) -> Point:
        """补边后节点 (i, j) 的坐标"""
        return (j - 0.5) * self.cs, (self.rows - i + 0.5) * self.cs

    def _edge_point(self, edge: Tuple[str, int, int]) -> Point:
        """边上的线性插值交点"""
        kind, i, j = edge
        a = (i, j)
        b = (i, j + 1) if kind == "h" else (i + 1, j)
        va, vb = self.field[a], self.field[b]
        s = (self.threshold - va) / (vb - va)
        xa, ya = self._node_xy(*a)
        xb, yb = self._node_xy(*b)
        return xa + s * (xb - xa), ya + s * (yb - ya)

    def _square_segments(self, i: int, j: int) -> List[Tuple[Tuple, Tuple]]:
        """单个方格内的有向线段 [(起点边, 终点边)]"""
        corners = (self.above[i, j], self.above[i, j + 1], self.above[i + 1, j + 1], self.above[i + 1, j])
        edges = {
            "top": ("h", i, j),
            "bottom": ("h", i + 1, j),
            "left": ("v", i, j),
            "right": ("v", i, j + 1),
        }
        crossed = []
        if corners[0] != corners[1]:
            crossed.append("top")
        if corners[1] != corners[2]:
            crossed.append("right")
        if corners[2] != corners[3]:
            crossed.append("bottom")
        if corners[3] != corners[0]:
            crossed.append("left")

        if not crossed:
            return []

        pairs = []  # (边1, 边2, 参考角点)
        if len(crossed) == 4:
            # 鞍点: 用四角平均值判断中心
            center = (self.field[i, j] + self.field[i, j + 1] + self.field[i + 1, j + 1] + self.field[i + 1, j]) / 4.0
            center_high = center >= self.threshold
            for corner in range(4):
                if corners[corner] != center_high:
                    e1, e2 = _CORNER_EDGES[corner]
                    pairs.append((e1, e2, corner))
        else:
            e1, e2 = crossed
            shared = [c for c, ce in _CORNER_EDGES.items() if e1 in ce and e2 in ce]
            pairs.append((e1, e2, shared[0] if shared else 0))

        corner_nodes = ((i, j), (i, j + 1), (i + 1, j + 1), (i + 1, j))
        segments = []
        for e1, e2, corner in pairs:
            p1 = self._edge_point(edges[e1])
            p2 = self._edge_point(edges[e2])
            hx, hy = self._node_xy(*corner_nodes[corner])
            cross = (p2[0] - p1[0]) * (hy - p1[1]) - (p2[1] - p1[1]) * (hx - p1[0])
            # 参考角点在高值侧时应位于左侧
            if (cross > 0) == bool(corners[corner]):
                segments.append((edges[e1], edges[e2]))
            else:
                segments.append((edges[e2], edges[e1]))
        return segments

    def rings(self) -> List[List[Point]]:
        """
        追踪所有闭合等值线

        Returns:
            闭合环列表 (首点 == 末点)
        """
        a = self.above.astype(np.uint8)
        case = (a[:-1, :-1] | (a[:-1, 1:] << 1) | (a[1:, 1:] << 2) | (a[1:, :-1] << 3))
        active = np.argwhere((case != 0) & (case != 15))

        successor = {}
        for i, j in active:
            for start, end in self._square_segments(int(i), int(j)):
                successor[start] = end

        points = {}
        rings = []
        visited = set()
        for start in sorted(successor):
            if start in visited:
                continue
            ring_edges = []
            edge = start
            while edge not in visited:
                visited.add(edge)
                ring_edges.append(edge)
                edge = successor[edge]
            ring = []
            for e in ring_edges:
                if e not in points:
                    points[e] = self._edge_point(e)
                p = points[e]
                if not ring or ring[-1] != p:
                    ring.append(p)
            if len(ring) > 1 and ring[0] == ring[-1]:
                ring.pop()
            if len(ring) >= 3:
                ring.append(ring[0])
                rings.append(ring)
        return rings


def compute_dbz_stats(grid: ReflectivityGrid, geometry) -> Optional[DbzStats]:
    """
    统计多边形内部单元中心的反射率 (跳过无数据单元)

    Args:
        grid: 反射率网格
        geometry: shapely 多边形或多多边形

    Returns:
        统计值，没有内部单元时返回 None
    """
    if geometry.is_empty:
        return None
    x, y = grid.cell_centers()
    values = grid.as_array()
    minx, miny, maxx, maxy = geometry.bounds
    box = (x >= minx) & (x <= maxx) & (y >= miny) & (y <= maxy) & ~grid.nodata_mask()
    if not box.any():
        return None
    inside = shapely.contains_xy(geometry, x[box], y[box])
    selected = values[box][inside]
    if selected.size == 0:
        return None
    return DbzStats(
        max=float(np.max(selected)),
        min=float(np.min(selected)),
        mean=float(np.mean(selected)),
        median=float(np.median(selected)),
        std=float(np.std(selected)),
    )


def extract_storm_objects(grid: ReflectivityGrid, threshold_dbz: float = THRESHOLD_DBZ) -> List[StormObject]:
    """
    从一帧中提取阈值等值线多边形

    Args:
        grid: 反射率网格
        threshold_dbz: 阈值 (dBZ)

    Returns:
        风暴对象列表，按质心 (x, y) 排序编号；洞被丢弃
    """
    fill = min(0.0, threshold_dbz - 1.0)
    data = grid.filled(fill)
    if not np.any(data >= threshold_dbz):
        return []

    tracer = MarchingSquares(data, threshold_dbz, grid.cell_size_km)
    candidates = []
    for ring in tracer.rings():
        area = shoelace_area(ring)
        if area <= 0:
            continue  # 洞
        poly = Polygon(ring)
        c = poly.centroid
        candidates.append((ring, area, (c.x, c.y), poly))

    candidates.sort(key=lambda item: item[2])
    objects = []
    for idx, (ring, area, centroid, poly) in enumerate(candidates):
        objects.append(StormObject(
            id=idx,
            polygon=tuple(ring),
            area_km2=area,
            centroid=centroid,
            dbz_stats=compute_dbz_stats(grid, poly),
        ))
    return objects


# ============================================================================
# 面积加权 DBSCAN
# ============================================================================

def _find(parent: List[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def cluster_storm_objects(objects: List[StormObject], area_limit_km2: float = AREA_LIMIT_KM2,
                          radius_km: float = RADIUS_KM, timestamp: int = 0) -> List[StormCell]:
    """
    面积加权 DBSCAN 聚类

    核心点: 自身面积 + 半径内 (质心距离 <= radius_km) 其他对象面积之和 >= area_limit_km2。
    相连的核心点组成一个簇，半径内的非核心对象作为离群点并入最近的核心点所在簇，
    其余对象为噪声。

    Args:
        objects: 同一帧的风暴对象
        area_limit_km2: 面积阈值
        radius_km: 邻域半径
        timestamp: 帧时间戳

    Returns:
        风暴单体列表，cell_id 按成员最小质心 (x, y) 升序
    """
    n = len(objects)
    if n == 0:
        return []

    centroids = np.array([obj.centroid for obj in objects], dtype=np.float64)
    areas = np.array([obj.area_km2 for obj in objects], dtype=np.float64)
    dist = np.hypot(centroids[:, None, 0] - centroids[None, :, 0], centroids[:, None, 1] - centroids[None, :, 1])
    near = dist <= radius_km
    sums = np.where(near, areas[None, :], 0.0).sum(axis=1)
    core = sums >= area_limit_km2

    parent = list(range(n))
    core_idx = np.flatnonzero(core)
    for a in core_idx:
        for b in core_idx[near[a, core_idx]]:
            ra, rb = _find(parent, int(a)), _find(parent, int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: Dict[int, List[int]] = {}
    for a in core_idx:
        groups.setdefault(_find(parent, int(a)), []).append(int(a))

    root_of = {int(a): _find(parent, int(a)) for a in core_idx}
    roles = {}
    for a in core_idx:
        roles[int(a)] = PointRole.CORE
    for b in range(n):
        if core[b]:
            continue
        neighbours = [int(a) for a in core_idx if near[a, b]]
        if not neighbours:
            roles[b] = PointRole.NOISE
            continue
        nearest = min(neighbours, key=lambda a: (dist[a, b], centroids[a, 0], centroids[a, 1]))
        groups[root_of[nearest]].append(b)
        roles[b] = PointRole.OUTLIER

    clusters = [sorted(members) for members in groups.values()]
    clusters.sort(key=lambda members: min((centroids[m, 0], centroids[m, 1]) for m in members))

    cells = []
    for cell_id, members in enumerate(clusters):
        member_objects = tuple(objects[m] for m in members)
        total = float(sum(obj.area_km2 for obj in member_objects))
        cx = sum(obj.area_km2 * obj.centroid[0] for obj in member_objects) / total
        cy = sum(obj.area_km2 * obj.centroid[1] for obj in member_objects) / total
        ordered = sorted(member_objects, key=lambda obj: obj.id)
        cells.append(StormCell(
            cell_id=cell_id,
            members=tuple(obj.id for obj in ordered),
            point_roles={objects[m].id: roles[m] for m in members},
            total_area_km2=total,
            centroid=(cx, cy),
            timestamp=int(timestamp),
            member_objects=tuple(ordered),
        ))
    return cells


def object_roles(objects: List[StormObject], cells: List[StormCell]) -> Dict[int, PointRole]:
    """每个对象的角色，未入簇的为噪声"""
    roles = {obj.id: PointRole.NOISE for obj in objects}
    for cell in cells:
        roles.update(cell.point_roles)
    return roles


def detect_frame(grid: ReflectivityGrid, threshold_dbz: float = THRESHOLD_DBZ,
                 area_limit_km2: float = AREA_LIMIT_KM2,
                 radius_km: float = RADIUS_KM) -> Tuple[List[StormObject], List[StormCell]]:
    """提取 + 聚类一帧"""
    objects = extract_storm_objects(grid, threshold_dbz)
    cells = cluster_storm_objects(objects, area_limit_km2, radius_km, timestamp=grid.timestamp)
    return objects, cells


# ============================================================================
# 行记录格式
# ============================================================================

_RECORD_RE = re.compile(r"^(-?\d+) (\d+) (core|outlier|noise) (\S+) (\S+) (\S+) POLYGON\(\((.*)\)\)$")


def format_polygon(ring) -> str:
    """POLYGON((x y, ...))，6 位小数"""
    return "POLYGON((" + ", ".join(f"{x:.6f} {y:.6f}" for x, y in ring) + "))"


def write_cells(objects: List[StormObject], cells: List[StormCell], path: Union[str, Path]) -> None:
    """
    写出对象/单体记录，噪声对象 cell_id 为 -1

    Args:
        objects: 风暴对象
        cells: 风暴单体
        path: 输出路径
    """
    cell_of = {}
    for cell in cells:
        for obj_id in cell.members:
            cell_of[obj_id] = cell.cell_id
    roles = object_roles(objects, cells)

    lines = []
    for obj in sorted(objects, key=lambda o: (cell_of.get(o.id, -1), o.id)):
        lines.append(
            f"{cell_of.get(obj.id, -1)} {obj.id} {roles[obj.id].value} {obj.area_km2:.6f} "
            f"{obj.centroid[0]:.6f} {obj.centroid[1]:.6f} {format_polygon(obj.polygon)}"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_cells(path: Union[str, Path], grid: ReflectivityGrid) -> Tuple[List[StormObject], List[StormCell]]:
    """
    读取对象/单体记录，dbz 统计由源网格重新计算

    Args:
        path: 记录文件
        grid: 对应帧

    Returns:
        (objects, cells)
    """
    path = Path(path)
    objects = []
    membership: Dict[int, List[Tuple[StormObject, PointRole]]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        m = _RECORD_RE.match(line.strip())
        if not m:
            raise ValueError(f"{path}:{lineno}: 无法解析风暴对象记录")
        cell_id, obj_id, role = int(m.group(1)), int(m.group(2)), PointRole(m.group(3))
        ring = []
        for pair in m.group(7).split(","):
            x, y = pair.split()
            ring.append((float(x), float(y)))
        poly = Polygon(ring)
        obj = StormObject(
            id=obj_id,
            polygon=tuple(ring),
            area_km2=abs(shoelace_area(ring)),
            centroid=(float(m.group(5)), float(m.group(6))),
            dbz_stats=compute_dbz_stats(grid, poly),
        )
        objects.append(obj)
        if cell_id >= 0:
            membership.setdefault(cell_id, []).append((obj, role))

    objects.sort(key=lambda o: o.id)
    cells = []
    for cell_id in sorted(membership):
        entries = sorted(membership[cell_id], key=lambda e: e[0].id)
        members = tuple(obj for obj, _ in entries)
        total = float(sum(obj.area_km2 for obj in members))
        cx = sum(obj.area_km2 * obj.centroid[0] for obj in members) / total
        cy = sum(obj.area_km2 * obj.centroid[1] for obj in members) / total
        cells.append(StormCell(
            cell_id=cell_id,
            members=tuple(obj.id for obj in members),
            point_roles={obj.id: role for obj, role in entries},
            total_area_km2=total,
            centroid=(cx, cy),
            timestamp=grid.timestamp,
            member_objects=members,
        ))
    return objects, cells
