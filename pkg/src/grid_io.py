"""
雷达反射率网格 - 数据模型、STORMGRID v1 文件格式与帧序列加载
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

NODATA_DBZ = np.float32(-327.68)
FORMAT_MAGIC = "STORMGRID v1"
FRAME_SUFFIX = ".grid"
KM_PER_DEG_LAT = 111.32


class FrameFormatError(ValueError):
    """网格文件格式错误"""


class SequenceError(ValueError):
    """帧序列时间戳重复或存在缺口"""


@dataclass(frozen=True, eq=False)
class ReflectivityGrid:
    """一帧 CAPPI 反射率合成图 (dBZ)，行优先存储，第一行为最北一行"""

    timestamp: int
    rows: int
    cols: int
    cell_size_km: float
    origin_lat: float
    origin_lon: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise ValueError(f"rows/cols 必须为整数: {self.rows}x{self.cols}")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"rows/cols 必须为正: {self.rows}x{self.cols}")
        if not (math.isfinite(self.cell_size_km) and self.cell_size_km > 0):
            raise ValueError(f"cell_size_km 必须 > 0: {self.cell_size_km}")

        values = np.array(self.values, dtype=np.float32).ravel()
        expected = self.rows * self.cols
        if values.size != expected:
            raise ValueError(f"值数量不匹配: expected {expected} values, got {values.size}")

        measured = values[values != NODATA_DBZ]
        if not np.all(np.isfinite(measured)):
            raise ValueError("网格包含非有限值")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReflectivityGrid):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.rows == other.rows
            and self.cols == other.cols
            and self.cell_size_km == other.cell_size_km
            and self.origin_lat == other.origin_lat
            and self.origin_lon == other.origin_lon
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def width_km(self) -> float:
        return self.cols * self.cell_size_km

    @property
    def height_km(self) -> float:
        return self.rows * self.cell_size_km

    def as_array(self) -> np.ndarray:
        """rows×cols float64 数组，哨兵值保留"""
        return self.values.reshape(self.rows, self.cols).astype(np.float64)

    def nodata_mask(self) -> np.ndarray:
        """哨兵 (无数据) 单元掩码"""
        return (self.values == NODATA_DBZ).reshape(self.rows, self.cols)

    def filled(self, fill_value: float = 0.0) -> np.ndarray:
        """哨兵单元替换为 fill_value 后的 float64 数组"""
        data = self.as_array()
        data[self.nodata_mask()] = fill_value
        return data

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        单元中心坐标 (km)

        Returns:
            (x, y)，均为 rows×cols；y 向北递增
        """
        cs = self.cell_size_km
        cols = (np.arange(self.cols) + 0.5) * cs
        rows = (self.rows - np.arange(self.rows) - 0.5) * cs
        x, y = np.meshgrid(cols, rows)
        return x, y

    def to_latlon(self, x_km, y_km):
        """网格坐标 (km) 转经纬度 (局地平面近似)"""
        lat = self.origin_lat + np.asarray(y_km, dtype=np.float64) / KM_PER_DEG_LAT
        lon = self.origin_lon + np.asarray(x_km, dtype=np.float64) / self._km_per_deg_lon()
        if np.ndim(lat) == 0:
            return float(lat), float(lon)
        return lat, lon

    def to_km(self, lat, lon):
        """经纬度转网格坐标 (km)"""
        y = (np.asarray(lat, dtype=np.float64) - self.origin_lat) * KM_PER_DEG_LAT
        x = (np.asarray(lon, dtype=np.float64) - self.origin_lon) * self._km_per_deg_lon()
        if np.ndim(x) == 0:
            return float(x), float(y)
        return x, y

    def _km_per_deg_lon(self) -> float:
        return KM_PER_DEG_LAT * math.cos(math.radians(self.origin_lat))

    @classmethod
    def from_array(cls, timestamp: int, data: np.ndarray, cell_size_km: float = 1.0,
                   origin_lat: float = 60.0, origin_lon: float = 25.0) -> "ReflectivityGrid":
        """由 rows×cols 数组构造网格"""
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError(f"需要二维数组, 实际维度 {data.ndim}")
        return cls(timestamp, data.shape[0], data.shape[1], cell_size_km,
                   origin_lat, origin_lon, data.ravel())


@dataclass(frozen=True)
class FrameSequence:
    """时间有序的帧序列"""

    frames: Tuple[ReflectivityGrid, ...]
    step_seconds: int = 300

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_spacing([f.timestamp for f in self.frames], self.step_seconds)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, index: int) -> ReflectivityGrid:
        return self.frames[index]

    @property
    def timestamps(self) -> List[int]:
        return [f.timestamp for f in self.frames]

    @property
    def span_seconds(self) -> int:
        if not self.frames:
            return 0
        return self.frames[-1].timestamp - self.frames[0].timestamp


def _check_spacing(timestamps: List[int], step_seconds: int) -> None:
    """校验时间戳严格递增且间隔等于 step_seconds"""
    if step_seconds <= 0:
        raise SequenceError(f"step_seconds 必须 > 0: {step_seconds}")

    seen = set()
    for ts in timestamps:
        if ts in seen:
            raise SequenceError(f"时间戳重复: t={ts}")
        seen.add(ts)

    missing = []
    for prev, nxt in zip(timestamps, timestamps[1:]):
        if nxt <= prev:
            raise SequenceError(f"时间戳未严格递增: t={prev} -> t={nxt}")
        delta = nxt - prev
        if delta % step_seconds != 0:
            raise SequenceError(f"帧间隔 {delta}s 不是 {step_seconds}s 的整数倍: t={prev} -> t={nxt}")
        missing.extend(range(prev + step_seconds, nxt, step_seconds))

    if missing:
        listed = ", ".join(f"t={t}" for t in missing)
        raise SequenceError(f"帧序列存在缺口, 缺少 {len(missing)} 帧: {listed}")


def write_frame(grid: ReflectivityGrid, path: Union[str, Path]) -> None:
    """
    写出 STORMGRID v1 文件

    Args:
        grid: 反射率网格
        path: 输出路径
    """
    if grid.values.size != grid.rows * grid.cols:
        raise ValueError(f"值数量不匹配: expected {grid.rows * grid.cols} values, got {grid.values.size}")

    header = (
        f"{FORMAT_MAGIC}\n"
        f"{grid.timestamp} {grid.rows} {grid.cols} "
        f"{float(grid.cell_size_km)!r} {float(grid.origin_lat)!r} {float(grid.origin_lon)!r}\n"
        "DATA\n"
    ).encode("ascii")
    payload = grid.values.astype("<f4").tobytes()

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + payload)
    except OSError as e:
        raise OSError(f"写入网格文件失败 {path}: {e}") from e


def _read_line(raw: bytes, offset: int, lineno: int, path: Path) -> Tuple[str, int]:
    """读取一行 ASCII 头部，返回 (内容, 下一行偏移)"""
    end = raw.find(b"\n", offset)
    if end < 0:
        raise FrameFormatError(f"{path}: 第 {lineno} 行 (offset {offset}) 缺少换行符")
    try:
        return raw[offset:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise FrameFormatError(f"{path}: 第 {lineno} 行 (offset {offset}) 不是 ASCII")


def load_frame(path: Union[str, Path]) -> ReflectivityGrid:
    """
    读取 STORMGRID v1 文件

    Args:
        path: 文件路径

    Returns:
        校验后的网格
    """
    path = Path(path)
    raw = path.read_bytes()

    magic, offset = _read_line(raw, 0, 1, path)
    if magic != FORMAT_MAGIC:
        raise FrameFormatError(f"{path}: 第 1 行应为 {FORMAT_MAGIC!r}, 实际 {magic!r}")

    header_offset = offset
    header, offset = _read_line(raw, offset, 2, path)
    parts = header.split()
    if len(parts) != 6:
        raise FrameFormatError(f"{path}: 第 2 行 (offset {header_offset}) 应有 6 个字段, 实际 {len(parts)}")
    try:
        timestamp, rows, cols = int(parts[0]), int(parts[1]), int(parts[2])
        cell_size_km, origin_lat, origin_lon = float(parts[3]), float(parts[4]), float(parts[5])
    except ValueError as e:
        raise FrameFormatError(f"{path}: 第 2 行 (offset {header_offset}) 无法解析: {e}")

    data_offset = offset
    marker, offset = _read_line(raw, offset, 3, path)
    if marker != "DATA":
        raise FrameFormatError(f"{path}: 第 3 行 (offset {data_offset}) 应为 'DATA', 实际 {marker!r}")

    payload = raw[offset:]
    if rows <= 0 or cols <= 0:
        raise FrameFormatError(f"{path}: 第 2 行 rows/cols 必须为正: {rows}x{cols}")
    expected = rows * cols
    if len(payload) % 4 != 0 or len(payload) // 4 != expected:
        raise FrameFormatError(
            f"{path}: offset {offset}: 值数量不匹配: expected {expected} values, got {len(payload) / 4:g}"
        )

    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    measured = values != NODATA_DBZ
    bad = np.flatnonzero(measured & ~np.isfinite(values))
    if bad.size:
        raise FrameFormatError(f"{path}: offset {offset + 4 * int(bad[0])}: 非有限值 (第 {int(bad[0])} 个值)")

    try:
        return ReflectivityGrid(timestamp, rows, cols, cell_size_km, origin_lat, origin_lon, values)
    except ValueError as e:
        raise FrameFormatError(f"{path}: {e}")


def frame_filename(timestamp: int) -> str:
    """帧文件名"""
    return f"frame_{int(timestamp)}{FRAME_SUFFIX}"


def load_sequence(directory: Union[str, Path], step_seconds: int = 300) -> FrameSequence:
    """
    加载目录下的所有帧并校验时间间隔

    Args:
        directory: 帧目录
        step_seconds: 期望帧间隔 (秒)

    Returns:
        按时间戳排序的帧序列
    """
    directory = Path(directory)
    paths = sorted(directory.glob(f"*{FRAME_SUFFIX}"))
    if not paths:
        raise FileNotFoundError(f"目录中没有帧文件 (*{FRAME_SUFFIX}): {directory}")

    frames = [load_frame(p) for p in paths]
    frames.sort(key=lambda g: g.timestamp)
    return FrameSequence(tuple(frames), step_seconds)


def write_sequence(sequence: FrameSequence, directory: Union[str, Path]) -> List[Path]:
    """写出帧序列，返回文件路径列表"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for grid in sequence:
        path = directory / frame_filename(grid.timestamp)
        write_frame(grid, path)
        written.append(path)
    return written
