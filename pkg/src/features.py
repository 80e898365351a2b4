"""
Features - 风暴单体 16 维特征构建、地面观测关联与损害等级标注
"""
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import shapely

from src.cells import StormCell, compute_dbz_stats
from src.config import LABEL_WINDOW_S, LIGHTNING_WINDOW_S
from src.dataset import FEATURE_NAMES, N_FEATURES, LabeledSample, mask_bits
from src.grid_io import ReflectivityGrid
from src.tracking import Track

EARTH_RADIUS_KM = 6371.0088
GROUND_FIELDS = ("temperature_c", "pressure_hpa", "wind_speed_ms", "wind_dir_deg", "precip_mm", "snow_depth_cm")
DBZ_FIELDS = ("max_dbz", "min_dbz", "mean_dbz", "median_dbz", "std_dbz")
ABSENT = "-"


class Strike(NamedTuple):
    lat: float
    lon: float
    timestamp: int


@dataclass(frozen=True)
class GroundObservation:
    """一个气象站在某时刻的观测，缺失字段为 None"""

    station_id: int
    lat: float
    lon: float
    timestamp: int
    temperature_c: Optional[float] = None
    pressure_hpa: Optional[float] = None
    wind_speed_ms: Optional[float] = None
    wind_dir_deg: Optional[float] = None
    precip_mm: Optional[float] = None
    snow_depth_cm: Optional[float] = None

    def __post_init__(self):
        if self.wind_dir_deg is not None and not 0.0 <= self.wind_dir_deg < 360.0:
            raise ValueError(f"风向必须在 [0, 360) 内: {self.wind_dir_deg}")


@dataclass(frozen=True)
class FeatureVector:
    """Table-2 顺序的 16 个特征，missing_mask 标记填 0 之前缺失的值"""

    area_km2: float
    age_seconds: float
    lightning_density_per_km2: float
    max_dbz: float
    min_dbz: float
    mean_dbz: float
    median_dbz: float
    std_dbz: float
    lat: float
    lon: float
    temperature_c: float
    pressure_hpa: float
    wind_speed_ms: float
    wind_dir_deg: float
    precip_mm: float
    snow_depth_cm: float
    missing_mask: Tuple[bool, ...] = field(default=(False,) * N_FEATURES)

    def __post_init__(self):
        if len(self.missing_mask) != N_FEATURES:
            raise ValueError(f"missing_mask 长度应为 {N_FEATURES}")
        if not all(math.isfinite(v) for v in self.values()):
            raise ValueError("特征包含非有限值")

    def values(self) -> Tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in FEATURE_NAMES)

    @property
    def mask(self) -> int:
        return mask_bits(self.missing_mask)


class DamageClass(IntEnum):
    """变压器停电比例分级"""

    NONE = 0
    MINOR = 1
    MODERATE = 2
    SEVERE = 3

    @classmethod
    def from_share(cls, share: float) -> "DamageClass":
        if not 0.0 <= share <= 1.0:
            raise ValueError(f"停电比例必须在 [0, 1] 内: {share}")
        if share == 0.0:
            return cls.NONE
        if share <= 0.10:
            return cls.MINOR
        if share <= 0.50:
            return cls.MODERATE
        return cls.SEVERE


class Transformer(NamedTuple):
    id: int
    lat: float
    lon: float


class Outage(NamedTuple):
    transformer_id: int
    start_ts: int
    end_ts: int


class TransformerSet:
    """变压器位置和停电记录"""

    def __init__(self, transformers: Sequence[Transformer], outages: Sequence[Outage] = ()):
        self.transformers = [Transformer(int(t[0]), float(t[1]), float(t[2])) for t in transformers]
        self.outages = [Outage(int(o[0]), int(o[1]), int(o[2])) for o in outages]

        ids = [t.id for t in self.transformers]
        if len(set(ids)) != len(ids):
            raise ValueError("变压器 id 重复")
        known = set(ids)
        self._intervals: Dict[int, List[Tuple[int, int]]] = {}
        for o in self.outages:
            if o.start_ts > o.end_ts:
                raise ValueError(f"停电区间非法: transformer {o.transformer_id} {o.start_ts} > {o.end_ts}")
            if o.transformer_id not in known:
                raise ValueError(f"停电记录引用未知变压器: {o.transformer_id}")
            self._intervals.setdefault(o.transformer_id, []).append((o.start_ts, o.end_ts))

        self.ids = np.array(ids, dtype=np.int64)
        self.lats = np.array([t.lat for t in self.transformers], dtype=np.float64)
        self.lons = np.array([t.lon for t in self.transformers], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.transformers)

    def is_out(self, transformer_id: int, start: int, end: int) -> bool:
        """停电区间与 [start, end] 是否相交"""
        return any(s <= end and e >= start for s, e in self._intervals.get(int(transformer_id), ()))

    def inside(self, geometry, grid: ReflectivityGrid) -> np.ndarray:
        """落在多边形内的变压器 id"""
        if not len(self) or geometry.is_empty:
            return np.zeros(0, dtype=np.int64)
        x, y = grid.to_km(self.lats, self.lons)
        minx, miny, maxx, maxy = geometry.bounds
        box = (x >= minx) & (x <= maxx) & (y >= miny) & (y <= maxy)
        if not box.any():
            return np.zeros(0, dtype=np.int64)
        hit = shapely.contains_xy(geometry, x[box], y[box])
        return self.ids[box][hit]


# ============================================================================
# 特征构建
# ============================================================================

def haversine_km(lat1, lon1, lat2, lon2):
    """大圆距离 (km)"""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def nearest_observation(obs: Sequence[GroundObservation], lat: float, lon: float,
                        timestamp: int) -> Optional[GroundObservation]:
    """
    最近气象站在最近时刻的观测

    距离相同取 station_id 较小者；时间差相同取较早的观测。

    Args:
        obs: 全部观测
        lat: 纬度
        lon: 经度
        timestamp: 目标时刻

    Returns:
        观测，没有任何观测时返回 None
    """
    if not obs:
        return None

    stations: Dict[int, Tuple[float, float]] = {}
    for o in obs:
        stations.setdefault(o.station_id, (o.lat, o.lon))
    ids = sorted(stations)
    slat = np.array([stations[s][0] for s in ids])
    slon = np.array([stations[s][1] for s in ids])
    dist = haversine_km(lat, lon, slat, slon)
    # argmin 在 id 升序上取第一个最小值
    station = ids[int(np.argmin(dist))]

    candidates = [o for o in obs if o.station_id == station]
    return min(candidates, key=lambda o: (abs(o.timestamp - timestamp), o.timestamp))


def _strike_arrays(strikes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(strikes) == 0:
        empty = np.zeros(0)
        return empty, empty, np.zeros(0, dtype=np.int64)
    arr = np.asarray([(s[0], s[1], s[2]) for s in strikes], dtype=np.float64)
    return arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64)


def count_strikes(geometry, grid: ReflectivityGrid, strikes, start: int, end: int) -> int:
    """时间窗 [start, end] 内落在多边形中的闪电数"""
    lat, lon, ts = _strike_arrays(strikes)
    keep = (ts >= start) & (ts <= end)
    if not keep.any() or geometry.is_empty:
        return 0
    x, y = grid.to_km(lat[keep], lon[keep])
    return int(np.count_nonzero(shapely.contains_xy(geometry, np.atleast_1d(x), np.atleast_1d(y))))


def featurize(cell: StormCell, track: Optional[Track], grid: ReflectivityGrid, strikes,
              obs: Sequence[GroundObservation],
              lightning_window_s: int = LIGHTNING_WINDOW_S) -> FeatureVector:
    """
    构建一个风暴单体的特征向量

    Args:
        cell: 风暴单体
        track: 单体所在轨迹，None 视为新生单体
        grid: 单体所在帧
        strikes: 闪电 (lat, lon, timestamp)
        obs: 地面观测

    Returns:
        特征向量，缺失值填 0 并在 missing_mask 中置位
    """
    ts = cell.timestamp
    geometry = cell.geometry
    values: Dict[str, float] = {}
    missing = set()

    values["area_km2"] = cell.total_area_km2
    values["age_seconds"] = float(track.until(ts).age_seconds) if track is not None else 0.0

    strikes_in = count_strikes(geometry, grid, strikes, ts - lightning_window_s, ts)
    values["lightning_density_per_km2"] = strikes_in / cell.total_area_km2 if cell.total_area_km2 > 0 else 0.0

    stats = compute_dbz_stats(grid, geometry)
    for name in DBZ_FIELDS:
        if stats is None:
            values[name] = 0.0
            missing.add(name)
        else:
            values[name] = getattr(stats, name.replace("_dbz", ""))

    lat, lon = grid.to_latlon(*cell.centroid)
    values["lat"], values["lon"] = lat, lon

    nearest = nearest_observation(obs, lat, lon, ts)
    for name in GROUND_FIELDS:
        value = getattr(nearest, name) if nearest is not None else None
        if value is None:
            values[name] = 0.0
            missing.add(name)
        else:
            values[name] = float(value)

    return FeatureVector(
        **values,
        missing_mask=tuple(name in missing for name in FEATURE_NAMES),
    )


def label_cell(cell: StormCell, transformers: TransformerSet, at: int, window_s: int = LABEL_WINDOW_S,
               *, grid: ReflectivityGrid) -> Optional[DamageClass]:
    """
    按单体下方变压器的停电比例分级

    Args:
        cell: 风暴单体
        transformers: 变压器与停电记录
        at: 标注时刻
        window_s: 停电时间窗 [at, at + window_s]
        grid: 单体所在帧 (经纬度换算)

    Returns:
        损害等级；单体下没有变压器时返回 None (不可标注)
    """
    under = transformers.inside(cell.geometry, grid)
    if under.size == 0:
        return None
    out = sum(1 for tid in under if transformers.is_out(tid, at, at + window_s))
    return DamageClass.from_share(out / under.size)


def filter_complete(samples: Sequence[LabeledSample]) -> List[LabeledSample]:
    """保留没有缺失值的样本，顺序不变"""
    return [s for s in samples if s.mask == 0]


def build_samples(cells: Sequence[StormCell], tracks: Dict[int, Track], grid: ReflectivityGrid, strikes,
                  obs: Sequence[GroundObservation], transformers: TransformerSet,
                  window_s: int = LABEL_WINDOW_S) -> List[LabeledSample]:
    """
    特征化并标注一帧的全部单体，跳过不可标注的单体

    Args:
        cells: 本帧单体
        tracks: cell_id -> 轨迹
        grid: 本帧
        strikes: 闪电
        obs: 地面观测
        transformers: 变压器
        window_s: 标注时间窗

    Returns:
        样本列表 (按 cell_id)
    """
    lat, lon, ts = _strike_arrays(strikes)
    recent = (ts >= grid.timestamp - LIGHTNING_WINDOW_S) & (ts <= grid.timestamp)
    frame_strikes = list(zip(lat[recent], lon[recent], ts[recent]))

    samples = []
    for cell in sorted(cells, key=lambda c: c.cell_id):
        label = label_cell(cell, transformers, cell.timestamp, window_s, grid=grid)
        if label is None:
            continue
        track = tracks.get(cell.cell_id)
        fv = featurize(cell, track, grid, frame_strikes, obs)
        samples.append(LabeledSample(
            features=fv.values(),
            label=int(label),
            mask=fv.mask,
            timestamp=cell.timestamp,
            cell_id=cell.cell_id,
            track_id=track.track_id if track is not None else -1,
        ))
    return samples


# ============================================================================
# 行记录格式 (空格分隔, '-' 表示缺失)
# ============================================================================

def _fmt(value: Optional[float]) -> str:
    return ABSENT if value is None else repr(float(value))


def _opt(token: str) -> Optional[float]:
    return None if token == ABSENT else float(token)


def _records(path: Union[str, Path], width: int):
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != width:
            raise ValueError(f"{path}:{lineno}: 应有 {width} 个字段, 实际 {len(parts)}")
        yield lineno, parts


def _write_lines(lines: List[str], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_strikes(strikes, path: Union[str, Path]) -> None:
    """lat lon timestamp"""
    _write_lines([f"{float(s[0])!r} {float(s[1])!r} {int(s[2])}" for s in strikes], path)


def read_strikes(path: Union[str, Path]) -> List[Strike]:
    return [Strike(float(p[0]), float(p[1]), int(p[2])) for _, p in _records(path, 3)]


def write_observations(obs: Sequence[GroundObservation], path: Union[str, Path]) -> None:
    """station_id lat lon timestamp 温度 气压 风速 风向 降水 积雪"""
    lines = []
    for o in obs:
        ground = " ".join(_fmt(getattr(o, name)) for name in GROUND_FIELDS)
        lines.append(f"{o.station_id} {float(o.lat)!r} {float(o.lon)!r} {o.timestamp} {ground}")
    _write_lines(lines, path)


def read_observations(path: Union[str, Path]) -> List[GroundObservation]:
    result = []
    for _, p in _records(path, 4 + len(GROUND_FIELDS)):
        ground = {name: _opt(tok) for name, tok in zip(GROUND_FIELDS, p[4:])}
        result.append(GroundObservation(int(p[0]), float(p[1]), float(p[2]), int(p[3]), **ground))
    return result


def write_transformers(transformers: TransformerSet, path: Union[str, Path]) -> None:
    """T id lat lon / O transformer_id start end"""
    lines = [f"T {t.id} {t.lat!r} {t.lon!r}" for t in transformers.transformers]
    lines += [f"O {o.transformer_id} {o.start_ts} {o.end_ts}" for o in transformers.outages]
    _write_lines(lines, path)


def read_transformers(path: Union[str, Path]) -> TransformerSet:
    transformers, outages = [], []
    for lineno, p in _records(path, 4):
        if p[0] == "T":
            transformers.append(Transformer(int(p[1]), float(p[2]), float(p[3])))
        elif p[0] == "O":
            outages.append(Outage(int(p[1]), int(p[2]), int(p[3])))
        else:
            raise ValueError(f"{path}:{lineno}: 未知记录类型 {p[0]!r}")
    return TransformerSet(transformers, outages)
