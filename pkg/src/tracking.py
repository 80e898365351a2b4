"""
Storm Tracking - Horn-Schunck 光流、单体跨帧关联与 2 小时路径预报
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from src.cells import StormCell
from src.config import FLOW_ALPHA, FLOW_ITERATIONS, MAX_MATCH_KM, STEP_SECONDS, FORECAST_STEPS
from src.grid_io import ReflectivityGrid

Point = Tuple[float, float]

# 邻域平均核 (四邻 1/6, 对角 1/12)
_AVERAGE_KERNEL = np.array([
    [1 / 12, 1 / 6, 1 / 12],
    [1 / 6, 0.0, 1 / 6],
    [1 / 12, 1 / 6, 1 / 12],
])


@dataclass(frozen=True, eq=False)
class FlowField:
    """稠密运动场，单位: 网格单元/帧间隔；u 向东为正，v 向北为正"""

    rows: int
    cols: int
    u: np.ndarray
    v: np.ndarray
    cell_size_km: float = 1.0

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64).reshape(self.rows, self.cols)
        v = np.array(self.v, dtype=np.float64).reshape(self.rows, self.cols)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("光流场包含非有限值")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, rows: int, cols: int, cell_size_km: float = 1.0) -> "FlowField":
        return cls(rows, cols, np.zeros((rows, cols)), np.zeros((rows, cols)), cell_size_km)

    @classmethod
    def uniform(cls, rows: int, cols: int, u: float, v: float, cell_size_km: float = 1.0) -> "FlowField":
        return cls(rows, cols, np.full((rows, cols), float(u)), np.full((rows, cols), float(v)), cell_size_km)

    def sample(self, x_km: float, y_km: float) -> Tuple[float, float]:
        """
        双线性插值采样

        Args:
            x_km: 东向坐标
            y_km: 北向坐标

        Returns:
            (u, v)，单位: 网格单元/帧
        """
        cs = self.cell_size_km
        col = min(max(x_km / cs - 0.5, 0.0), self.cols - 1.0)
        row = min(max(self.rows - 0.5 - y_km / cs, 0.0), self.rows - 1.0)
        c0, r0 = int(np.floor(col)), int(np.floor(row))
        c1, r1 = min(c0 + 1, self.cols - 1), min(r0 + 1, self.rows - 1)
        fc, fr = col - c0, row - r0

        def interp(field: np.ndarray) -> float:
            top = field[r0, c0] * (1 - fc) + field[r0, c1] * fc
            bottom = field[r1, c0] * (1 - fc) + field[r1, c1] * fc
            return float(top * (1 - fr) + bottom * fr)

        return interp(self.u), interp(self.v)

    def advect(self, point: Point) -> Point:
        """沿光流推进一帧 (km)"""
        du, dv = self.sample(*point)
        return point[0] + du * self.cell_size_km, point[1] + dv * self.cell_size_km

    def clamp(self, point: Point) -> Point:
        """限制在网格范围内"""
        width, height = self.cols * self.cell_size_km, self.rows * self.cell_size_km
        return min(max(point[0], 0.0), width), min(max(point[1], 0.0), height)


@dataclass(frozen=True)
class TrackObservation:
    timestamp: int
    cell_id: int
    centroid: Point


@dataclass(frozen=True)
class Track:
    """一条单体轨迹"""

    track_id: int
    observations: Tuple[TrackObservation, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.observations:
            raise ValueError(f"轨迹 {self.track_id} 没有观测")
        stamps = [o.timestamp for o in self.observations]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError(f"轨迹 {self.track_id} 时间戳未严格递增")

    @property
    def last(self) -> TrackObservation:
        return self.observations[-1]

    @property
    def age_seconds(self) -> int:
        return self.observations[-1].timestamp - self.observations[0].timestamp

    def extend(self, observation: TrackObservation) -> "Track":
        return Track(self.track_id, self.observations + (observation,))

    def until(self, timestamp: int) -> "Track":
        """截取到 timestamp (含) 的轨迹"""
        kept = tuple(o for o in self.observations if o.timestamp <= timestamp)
        return Track(self.track_id, kept)


@dataclass(frozen=True)
class ForecastPath:
    """未来 2 小时、5 分钟分辨率的质心路径"""

    track_id: int
    start: Tuple[int, Point]
    positions: Tuple[Point, ...]
    step_seconds: int = STEP_SECONDS

    def __post_init__(self):
        if len(self.positions) != FORECAST_STEPS:
            raise ValueError(f"预报位置数应为 {FORECAST_STEPS}, 实际 {len(self.positions)}")

    def lead_minutes(self) -> List[int]:
        return [(k + 1) * self.step_seconds // 60 for k in range(len(self.positions))]


# ============================================================================
# Horn-Schunck 光流
# ============================================================================

def _derivatives(first: np.ndarray, second: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2×2×2 立方体前向差分平均 (列向、行向、时间)"""
    p1 = np.pad(first, ((0, 1), (0, 1)), mode="edge")
    p2 = np.pad(second, ((0, 1), (0, 1)), mode="edge")

    def dx(p):
        return (p[:-1, 1:] - p[:-1, :-1]) + (p[1:, 1:] - p[1:, :-1])

    def dy(p):
        return (p[1:, :-1] - p[:-1, :-1]) + (p[1:, 1:] - p[:-1, 1:])

    def corners(p):
        return p[:-1, :-1] + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:]

    ix = 0.25 * (dx(p1) + dx(p2))
    iy = 0.25 * (dy(p1) + dy(p2))
    it = 0.25 * (corners(p2) - corners(p1))
    return ix, iy, it


def horn_schunck_flow(prev: ReflectivityGrid, next: ReflectivityGrid, alpha: float = FLOW_ALPHA,
                      iterations: int = FLOW_ITERATIONS) -> FlowField:
    """
    Horn-Schunck 稠密光流

    Args:
        prev: 前一帧
        next: 后一帧
        alpha: 平滑项权重
        iterations: 固定迭代次数

    Returns:
        光流场 (无数据单元按 0 dBZ 处理)
    """
    if prev.shape != next.shape:
        raise ValueError(f"帧尺寸不一致: {prev.shape} vs {next.shape}")
    if iterations < 1:
        raise ValueError(f"iterations 必须 >= 1: {iterations}")
    if not alpha > 0:
        raise ValueError(f"alpha 必须 > 0: {alpha}")

    ix, iy, it = _derivatives(prev.filled(0.0), next.filled(0.0))
    denom = alpha ** 2 + ix ** 2 + iy ** 2

    u = np.zeros_like(ix)
    v_row = np.zeros_like(ix)
    for _ in range(iterations):
        u_avg = ndimage.convolve(u, _AVERAGE_KERNEL, mode="nearest")
        v_avg = ndimage.convolve(v_row, _AVERAGE_KERNEL, mode="nearest")
        common = (ix * u_avg + iy * v_avg + it) / denom
        u = u_avg - ix * common
        v_row = v_avg - iy * common

    # 行号向南递增，v 取北向为正
    return FlowField(prev.rows, prev.cols, u, -v_row, prev.cell_size_km)


# ============================================================================
# 关联与预报
# ============================================================================

def associate_tracks(prev_tracks: List[Track], cells: List[StormCell], flow: Optional[FlowField],
                     max_match_km: float = MAX_MATCH_KM, next_track_id: Optional[int] = None) -> List[Track]:
    """
    贪心最近邻关联

    Args:
        prev_tracks: 上一帧的活跃轨迹
        cells: 当前帧的风暴单体
        flow: 上一帧到当前帧的光流，None 表示不平移
        max_match_km: 最大匹配距离
        next_track_id: 新轨迹起始编号，默认为已有最大编号 + 1

    Returns:
        当前帧活跃轨迹: 匹配上的旧轨迹 + 新轨迹；未匹配的旧轨迹结束
    """
    if not cells:
        return []

    timestamp = cells[0].timestamp
    if next_track_id is None:
        next_track_id = max((t.track_id for t in prev_tracks), default=-1) + 1

    tracks = sorted(prev_tracks, key=lambda t: t.track_id)
    ordered_cells = sorted(cells, key=lambda c: c.cell_id)

    predicted = []
    for track in tracks:
        centroid = track.last.centroid
        predicted.append(flow.advect(centroid) if flow is not None else centroid)

    candidates = []
    for ti, p in enumerate(predicted):
        for ci, cell in enumerate(ordered_cells):
            d = float(np.hypot(cell.centroid[0] - p[0], cell.centroid[1] - p[1]))
            if d <= max_match_km:
                candidates.append((d, tracks[ti].track_id, cell.cell_id, ti, ci))
    candidates.sort()

    used_tracks, used_cells = set(), set()
    matched: Dict[int, Track] = {}
    for d, _, _, ti, ci in candidates:
        if ti in used_tracks or ci in used_cells:
            continue
        used_tracks.add(ti)
        used_cells.add(ci)
        cell = ordered_cells[ci]
        matched[ti] = tracks[ti].extend(TrackObservation(timestamp, cell.cell_id, cell.centroid))

    result = [matched[ti] for ti in sorted(matched)]
    for ci, cell in enumerate(ordered_cells):
        if ci in used_cells:
            continue
        result.append(Track(next_track_id, (TrackObservation(timestamp, cell.cell_id, cell.centroid),)))
        next_track_id += 1
    return result


def forecast_path(track: Track, flow: FlowField, steps: int = FORECAST_STEPS,
                  step_seconds: int = STEP_SECONDS) -> ForecastPath:
    """
    冻结光流场下的逐帧平流外推

    Args:
        track: 轨迹
        flow: 最近一帧的光流
        steps: 步数 (默认 24)
        step_seconds: 步长 (秒)

    Returns:
        预报路径
    """
    point = track.last.centroid
    positions = []
    for _ in range(steps):
        point = flow.clamp(flow.advect(point))
        positions.append(point)
    return ForecastPath(track.track_id, (track.last.timestamp, track.last.centroid), tuple(positions), step_seconds)


class TrackingSession:
    """逐帧驱动光流、关联和预报，保留全部轨迹"""

    def __init__(self, alpha: float = FLOW_ALPHA, iterations: int = FLOW_ITERATIONS,
                 max_match_km: float = MAX_MATCH_KM, step_seconds: int = STEP_SECONDS):
        self.alpha = alpha
        self.iterations = iterations
        self.max_match_km = max_match_km
        self.step_seconds = step_seconds
        self.active: List[Track] = []
        self.finished: List[Track] = []
        self.next_track_id = 0
        self._prev_grid: Optional[ReflectivityGrid] = None

    def update(self, grid: ReflectivityGrid, cells: List[StormCell]) -> Tuple[List[Track], List[ForecastPath]]:
        """
        处理一帧

        Args:
            grid: 当前帧
            cells: 当前帧的风暴单体

        Returns:
            (活跃轨迹, 预报路径)
        """
        if self._prev_grid is None:
            flow = None
        else:
            flow = horn_schunck_flow(self._prev_grid, grid, self.alpha, self.iterations)

        tracks = associate_tracks(self.active, cells, flow, self.max_match_km, self.next_track_id)
        continuing = {t.track_id for t in tracks}
        self.finished.extend(t for t in self.active if t.track_id not in continuing)
        self.next_track_id = max([self.next_track_id - 1] + [t.track_id for t in tracks]) + 1
        self.active = tracks
        self._prev_grid = grid

        forecast_flow = flow if flow is not None else FlowField.zeros(grid.rows, grid.cols, grid.cell_size_km)
        forecasts = [forecast_path(t, forecast_flow, step_seconds=self.step_seconds) for t in tracks]
        return tracks, forecasts

    def all_tracks(self) -> List[Track]:
        return sorted(self.finished + self.active, key=lambda t: t.track_id)


# ============================================================================
# 行记录格式
# ============================================================================

def write_tracks(tracks: List[Track], path: Union[str, Path]) -> None:
    """每个观测一行: track_id timestamp cell_id x y age_seconds"""
    lines = []
    for track in sorted(tracks, key=lambda t: t.track_id):
        first = track.observations[0].timestamp
        for obs in track.observations:
            lines.append(
                f"{track.track_id} {obs.timestamp} {obs.cell_id} "
                f"{obs.centroid[0]:.6f} {obs.centroid[1]:.6f} {obs.timestamp - first}"
            )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_tracks(path: Union[str, Path]) -> List[Track]:
    """读取 write_tracks 的输出"""
    observations: Dict[int, List[TrackObservation]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: 轨迹记录应有 6 个字段")
        track_id, ts, cell_id = int(parts[0]), int(parts[1]), int(parts[2])
        observations.setdefault(track_id, []).append(
            TrackObservation(ts, cell_id, (float(parts[3]), float(parts[4])))
        )
    return [Track(tid, tuple(sorted(obs, key=lambda o: o.timestamp))) for tid, obs in sorted(observations.items())]


def write_forecasts(forecasts: List[ForecastPath], path: Union[str, Path]) -> None:
    """每个预报位置一行: track_id +minutes x y"""
    lines = []
    for fc in sorted(forecasts, key=lambda f: f.track_id):
        for minutes, (x, y) in zip(fc.lead_minutes(), fc.positions):
            lines.append(f"{fc.track_id} +{minutes} {x:.6f} {y:.6f}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
