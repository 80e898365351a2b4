"""
Synthetic Scenario - 合成雷达帧序列、闪电、地面观测、变压器与停电记录
"""
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from dateutil import parser as date_parser
from dateutil import tz

from src.cells import detect_frame
from src.config import AREA_LIMIT_KM2, RADIUS_KM, SEED, THRESHOLD_DBZ, ConfigError, parse_key_values
from src.dataset import Dataset, N_CLASSES, N_FEATURES
from src.features import (
    GROUND_FIELDS, GroundObservation, Outage, Strike, Transformer, TransformerSet,
    count_strikes, write_observations, write_strikes, write_transformers,
)
from src.grid_io import FrameSequence, ReflectivityGrid, write_sequence

# 原始数据中各损害等级的样本数，归一化后作为默认先验 (约 0.978 / 0.0087 / 0.0076 / 0.0059)
REFERENCE_COUNTS = (551029, 4919, 4286, 3337)
REFERENCE_PRIORS = tuple(c / sum(REFERENCE_COUNTS) for c in REFERENCE_COUNTS)
GROUND_COLUMNS = tuple(range(N_FEATURES - len(GROUND_FIELDS), N_FEATURES))

# 随机流编号
_STREAM_STORMS, _STREAM_BACKGROUND, _STREAM_LIGHTNING = 0, 1, 2
_STREAM_STATIONS, _STREAM_TRANSFORMERS, _STREAM_DAMAGE, _STREAM_DIRECT = 3, 4, 5, 6


@dataclass(frozen=True)
class StormTemplate:
    """一个漂移的各向异性高斯反射率团"""

    x_km: float
    y_km: float
    sigma_x_km: float
    sigma_y_km: float
    angle_rad: float
    peak_dbz: float
    vx_km: float  # 每帧
    vy_km: float
    birth_frame: int
    lifetime_frames: int

    def alive(self, frame: int) -> bool:
        return self.birth_frame <= frame < self.birth_frame + self.lifetime_frames

    def center(self, frame: int) -> Tuple[float, float]:
        k = frame - self.birth_frame
        return self.x_km + self.vx_km * k, self.y_km + self.vy_km * k

    def render(self, frame: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center(frame)
        dx, dy = x - cx, y - cy
        cos, sin = math.cos(self.angle_rad), math.sin(self.angle_rad)
        u = (dx * cos + dy * sin) / self.sigma_x_km
        v = (-dx * sin + dy * cos) / self.sigma_y_km
        return self.peak_dbz * np.exp(-0.5 * (u * u + v * v))


@dataclass
class ScenarioConfig:
    """合成场景参数，字段名即配置文件 key"""

    seed: int = SEED
    rows: int = 96
    cols: int = 96
    cell_size_km: float = 1.0
    n_frames: int = 24
    step_seconds: int = 300
    start_time: str = "2017-06-01T12:00:00Z"
    origin_lat: float = 60.0
    origin_lon: float = 25.0

    n_storms: int = 6
    sigma_km: float = 4.0
    anisotropy: float = 1.5
    peak_dbz_min: float = 45.0
    peak_dbz_max: float = 60.0
    drift_max_km: float = 1.5
    lifetime_min: int = 8
    lifetime_max: int = 24
    background_max_dbz: float = 10.0

    transformer_density: float = 0.5
    lightning_rate: float = 6.0
    n_stations: int = 9
    missing_rate: float = 0.1

    damage_a: float = 0.3
    damage_b: float = 2.0
    damage_spread: float = 2.5
    outage_min_s: int = 30
    outage_max_s: int = 120

    priors: Tuple[float, ...] = REFERENCE_PRIORS
    overlap: float = 0.0

    storms: Optional[Tuple[StormTemplate, ...]] = None

    def validate(self) -> "ScenarioConfig":
        errors = []
        if len(self.priors) != N_CLASSES or any(p < 0 for p in self.priors):
            errors.append(f"priors 需要 {N_CLASSES} 个非负数")
        elif abs(sum(self.priors) - 1.0) > 1e-9:
            errors.append(f"priors 之和必须为 1: {sum(self.priors)}")
        for name in ("rows", "cols", "n_frames", "step_seconds", "lifetime_min", "lifetime_max"):
            if getattr(self, name) < 1:
                errors.append(f"{name} 必须 >= 1")
        for name in ("n_storms", "n_stations", "transformer_density", "lightning_rate", "overlap",
                     "drift_max_km", "damage_spread", "outage_min_s"):
            if getattr(self, name) < 0:
                errors.append(f"{name} 必须 >= 0")
        if not self.cell_size_km > 0 or not self.sigma_km > 0 or self.anisotropy < 1:
            errors.append("cell_size_km / sigma_km 必须 > 0, anisotropy 必须 >= 1")
        if not 0.0 <= self.missing_rate <= 1.0:
            errors.append("missing_rate 必须在 [0, 1] 内")
        if self.lifetime_max < self.lifetime_min or self.peak_dbz_max < self.peak_dbz_min:
            errors.append("区间上界小于下界")
        if self.outage_max_s < self.outage_min_s or self.step_seconds // 2 + self.outage_max_s >= self.step_seconds:
            errors.append("停电时长必须在一帧内结束 (step_seconds/2 + outage_max_s < step_seconds)")
        if errors:
            raise ConfigError("场景配置错误: " + "; ".join(errors))
        return self

    def start_timestamp(self) -> int:
        """ISO-8601 起始时刻转 UTC 秒，未带时区按 UTC"""
        dt = date_parser.isoparse(self.start_time)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=tz.UTC)
        return int(dt.timestamp())

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if key == "storms":
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(float(v)) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def load_scenario_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    读取 key=value 场景配置

    Args:
        path: 配置文件

    Returns:
        校验后的场景配置
    """
    values = parse_key_values(Path(path).read_text(encoding="utf-8"), source=str(path))
    types = {f.name: f.type for f in fields(ScenarioConfig) if f.name != "storms"}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(f"{path}: 未知场景配置项 {key!r}")
        default = getattr(ScenarioConfig, key)
        try:
            if key == "priors":
                kwargs[key] = tuple(float(v) for v in raw.split(","))
            elif isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise ConfigError(f"{path}: {key} 的值无法解析: {raw!r}")
    return ScenarioConfig(**kwargs).validate()


class DamageEvent(NamedTuple):
    """一个单体在一帧中覆盖的变压器"""

    timestamp: int
    transformer_ids: np.ndarray
    local_dbz: np.ndarray
    lightning_density: float
    offset: float  # 事件随机效应


class Scenario(NamedTuple):
    frames: FrameSequence
    strikes: List[Strike]
    observations: List[GroundObservation]
    transformers: TransformerSet
    damage_c: float


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def outage_probabilities(event: DamageEvent, a: float, b: float, c: float) -> np.ndarray:
    """logistic(a (dBZ - 35) + b · 闪电密度 - c + 事件效应)"""
    return _logistic(a * (event.local_dbz - 35.0) + b * event.lightning_density - c + event.offset)


def expected_no_damage_share(events: Sequence[DamageEvent], a: float, b: float, c: float) -> float:
    """各事件中没有任何变压器停电的期望比例"""
    if not events:
        return 1.0
    return float(np.mean([np.prod(1.0 - outage_probabilities(e, a, b, c)) for e in events]))


def calibrate_damage_model(events: Sequence[DamageEvent], priors: Sequence[float], a: float, b: float,
                           lo: float = -60.0, hi: float = 60.0, iterations: int = 100) -> float:
    """
    二分求 c，使无损害事件的期望比例等于 priors[0]

    只标定类别 0 的比例; 类别 1-3 之间的分配由 dBZ、闪电密度和事件随机效应
    (damage_spread) 决定，不跟随 priors[1:]。

    Args:
        events: 损害事件
        priors: 类别先验
        a: dBZ 系数
        b: 闪电密度系数

    Returns:
        c
    """
    target = float(priors[0])
    if not events:
        print("   ⚠️ 没有覆盖变压器的单体, 跳过损害模型标定")
        return 0.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        # 期望比例随 c 单调递增
        if expected_no_damage_share(events, a, b, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ============================================================================
# 场景生成
# ============================================================================

def draw_storms(config: ScenarioConfig) -> Tuple[StormTemplate, ...]:
    """按配置随机生成风暴模板"""
    if config.storms is not None:
        return tuple(config.storms)
    rng = np.random.default_rng([config.seed, _STREAM_STORMS])
    width, height = config.cols * config.cell_size_km, config.rows * config.cell_size_km
    storms = []
    for _ in range(config.n_storms):
        ratio = rng.uniform(1.0, config.anisotropy)
        lifetime = int(rng.integers(config.lifetime_min, config.lifetime_max + 1))
        storms.append(StormTemplate(
            x_km=float(rng.uniform(0.15, 0.85) * width),
            y_km=float(rng.uniform(0.15, 0.85) * height),
            sigma_x_km=config.sigma_km * math.sqrt(ratio),
            sigma_y_km=config.sigma_km / math.sqrt(ratio),
            angle_rad=float(rng.uniform(0.0, math.pi)),
            peak_dbz=float(rng.uniform(config.peak_dbz_min, config.peak_dbz_max)),
            vx_km=float(rng.uniform(-config.drift_max_km, config.drift_max_km)),
            vy_km=float(rng.uniform(-config.drift_max_km, config.drift_max_km)),
            birth_frame=int(rng.integers(0, max(1, config.n_frames - config.lifetime_min + 1))),
            lifetime_frames=lifetime,
        ))
    return tuple(storms)


def render_frames(config: ScenarioConfig, storms: Sequence[StormTemplate]) -> FrameSequence:
    """背景噪声 (低于阈值) 上叠加风暴反射率，取逐点最大值"""
    rng = np.random.default_rng([config.seed, _STREAM_BACKGROUND])
    start = config.start_timestamp()
    frames = []
    for k in range(config.n_frames):
        blank = ReflectivityGrid.from_array(start, np.zeros((config.rows, config.cols)), config.cell_size_km,
                                            config.origin_lat, config.origin_lon)
        x, y = blank.cell_centers()
        field = rng.uniform(0.0, config.background_max_dbz, size=(config.rows, config.cols))
        for storm in storms:
            if storm.alive(k):
                field = np.maximum(field, storm.render(k, x, y))
        frames.append(ReflectivityGrid.from_array(start + k * config.step_seconds, field, config.cell_size_km,
                                                  config.origin_lat, config.origin_lon))
    return FrameSequence(tuple(frames), config.step_seconds)


def draw_lightning(config: ScenarioConfig, storms: Sequence[StormTemplate], frames: FrameSequence) -> List[Strike]:
    """每帧每个活跃风暴按 Poisson 产生闪电，落点集中在风暴中心附近"""
    rng = np.random.default_rng([config.seed, _STREAM_LIGHTNING])
    strikes = []
    for k, grid in enumerate(frames):
        for storm in storms:
            if not storm.alive(k):
                continue
            rate = config.lightning_rate * max(0.0, (storm.peak_dbz - 35.0) / 15.0)
            n = int(rng.poisson(rate))
            if n == 0:
                continue
            cx, cy = storm.center(k)
            spread = 0.5 * min(storm.sigma_x_km, storm.sigma_y_km)
            xs = rng.normal(cx, spread, n)
            ys = rng.normal(cy, spread, n)
            ts = grid.timestamp - rng.integers(0, config.step_seconds, n)
            lat, lon = grid.to_latlon(xs, ys)
            strikes.extend(Strike(float(a), float(o), int(t)) for a, o, t in zip(lat, lon, ts))
    strikes.sort(key=lambda s: (s.timestamp, s.lat, s.lon))
    return strikes


def draw_observations(config: ScenarioConfig, frames: FrameSequence) -> List[GroundObservation]:
    """气象站每帧一次观测，各字段以 missing_rate 的概率缺失"""
    rng = np.random.default_rng([config.seed, _STREAM_STATIONS])
    if not len(frames) or config.n_stations == 0:
        return []
    first = frames[0]
    sx = rng.uniform(0.0, first.width_km, config.n_stations)
    sy = rng.uniform(0.0, first.height_km, config.n_stations)
    slat, slon = first.to_latlon(sx, sy)
    cols = np.clip((sx / first.cell_size_km).astype(int), 0, first.cols - 1)
    rows = np.clip((first.rows - sy / first.cell_size_km).astype(int), 0, first.rows - 1)

    observations = []
    for grid in frames:
        dbz = grid.filled(0.0)[rows, cols]
        for s in range(config.n_stations):
            values = {
                "temperature_c": float(rng.normal(15.0, 4.0)),
                "pressure_hpa": float(rng.normal(1005.0, 6.0)),
                "wind_speed_ms": float(abs(rng.normal(6.0, 3.0))),
                "wind_dir_deg": float(rng.uniform(0.0, 360.0)) % 360.0,
                "precip_mm": float(max(0.0, (dbz[s] - 20.0) / 5.0)),
                "snow_depth_cm": 0.0,
            }
            missing = rng.random(len(GROUND_FIELDS)) < config.missing_rate
            for name, drop in zip(GROUND_FIELDS, missing):
                if drop:
                    values[name] = None
            observations.append(GroundObservation(s, float(slat[s]), float(slon[s]), grid.timestamp, **values))
    return observations


def draw_transformers(config: ScenarioConfig, grid: ReflectivityGrid) -> List[Transformer]:
    rng = np.random.default_rng([config.seed, _STREAM_TRANSFORMERS])
    n = int(rng.poisson(config.transformer_density * grid.width_km * grid.height_km))
    x = rng.uniform(0.0, grid.width_km, n)
    y = rng.uniform(0.0, grid.height_km, n)
    lat, lon = grid.to_latlon(x, y)
    return [Transformer(i, float(lat[i]), float(lon[i])) for i in range(n)]


def collect_events(config: ScenarioConfig, frames: FrameSequence, strikes: Sequence[Strike],
                   transformers: TransformerSet, threshold_dbz: float = THRESHOLD_DBZ,
                   area_limit_km2: float = AREA_LIMIT_KM2, radius_km: float = RADIUS_KM) -> List[DamageEvent]:
    """检测每帧的单体，记录单体下方的变压器及其局地反射率"""
    rng = np.random.default_rng([config.seed, _STREAM_DAMAGE])
    events = []
    for grid in frames:
        _, cells = detect_frame(grid, threshold_dbz, area_limit_km2, radius_km)
        values = grid.filled(0.0)
        for cell in cells:
            geometry = cell.geometry
            under = transformers.inside(geometry, grid)
            if under.size == 0:
                continue
            x, y = grid.to_km(transformers.lats[under], transformers.lons[under])
            cols = np.clip((np.atleast_1d(x) / grid.cell_size_km).astype(int), 0, grid.cols - 1)
            rows = np.clip((grid.rows - np.atleast_1d(y) / grid.cell_size_km).astype(int), 0, grid.rows - 1)
            n_strikes = count_strikes(geometry, grid, strikes, grid.timestamp - config.step_seconds, grid.timestamp)
            events.append(DamageEvent(
                timestamp=grid.timestamp,
                transformer_ids=under,
                local_dbz=values[rows, cols],
                lightning_density=n_strikes / cell.total_area_km2,
                offset=float(rng.normal(0.0, config.damage_spread)) if config.damage_spread > 0 else 0.0,
            ))
    return events


def draw_outages(config: ScenarioConfig, events: Sequence[DamageEvent], c: float) -> List[Outage]:
    """按标定后的模型抽样停电，停电区间落在事件所在帧的标注窗口内"""
    rng = np.random.default_rng([config.seed, _STREAM_DAMAGE, 1])
    outages = []
    for event in events:
        p = outage_probabilities(event, config.damage_a, config.damage_b, c)
        hit = rng.random(p.size) < p
        for tid in event.transformer_ids[hit]:
            start = event.timestamp + int(rng.integers(1, config.step_seconds // 2))
            duration = int(rng.integers(config.outage_min_s, config.outage_max_s + 1))
            outages.append(Outage(int(tid), start, start + duration))
    return outages


def generate_scenario(config: ScenarioConfig, threshold_dbz: float = THRESHOLD_DBZ,
                      area_limit_km2: float = AREA_LIMIT_KM2, radius_km: float = RADIUS_KM) -> Scenario:
    """
    生成完整场景

    Args:
        config: 场景配置
        threshold_dbz / area_limit_km2 / radius_km: 标定损害模型时使用的检测参数

    Returns:
        Scenario(帧序列, 闪电, 地面观测, 变压器与停电, 标定的 c)
    """
    config.validate()
    storms = draw_storms(config)
    frames = render_frames(config, storms)
    strikes = draw_lightning(config, storms, frames)
    observations = draw_observations(config, frames)
    positions = draw_transformers(config, frames[0])

    bare = TransformerSet(positions)
    events = collect_events(config, frames, strikes, bare, threshold_dbz, area_limit_km2, radius_km)
    c = calibrate_damage_model(events, config.priors, config.damage_a, config.damage_b)
    outages = draw_outages(config, events, c)
    return Scenario(frames, strikes, observations, TransformerSet(positions, outages), c)


def write_scenario(scenario: Scenario, config: ScenarioConfig, directory: Union[str, Path],
                   frames_dir: Optional[Union[str, Path]] = None) -> Dict[str, Path]:
    """
    写出场景文件

    Args:
        scenario: 场景
        config: 场景配置
        directory: 输出目录
        frames_dir: 帧目录，默认为 directory/frames

    Returns:
        {名称: 路径}
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames_dir = Path(frames_dir) if frames_dir is not None else directory / "frames"
    write_sequence(scenario.frames, frames_dir)

    paths = {
        "strikes": directory / "strikes.txt",
        "observations": directory / "observations.txt",
        "transformers": directory / "transformers.txt",
        "scenario": directory / "scenario.cfg",
    }
    write_strikes(scenario.strikes, paths["strikes"])
    write_observations(scenario.observations, paths["observations"])
    write_transformers(scenario.transformers, paths["transformers"])
    paths["scenario"].write_text(config.to_text() + f"# calibrated damage_c={scenario.damage_c!r}\n",
                                 encoding="utf-8")
    paths["frames"] = frames_dir
    return paths


# ============================================================================
# 直接生成特征数据集
# ============================================================================

def generate_dataset_direct(config: ScenarioConfig, n: int) -> Dataset:
    """
    跳过雷达处理，直接按类别抽样特征

    类别 k 的每个特征 ~ k + U(-w/2, w/2)，w = 0.9 + 2·overlap；
    overlap = 0 时各类别支撑集互不相交。地面观测列以 missing_rate 缺失并填 0。

    Args:
        config: 场景配置 (seed, priors, overlap, missing_rate)
        n: 样本数

    Returns:
        数据集
    """
    if n < 1:
        raise ValueError(f"n 必须 >= 1: {n}")
    config.validate()
    rng = np.random.default_rng([config.seed, _STREAM_DIRECT])
    labels = rng.choice(N_CLASSES, size=n, p=np.asarray(config.priors) / np.sum(config.priors))
    width = 0.9 + 2.0 * config.overlap
    X = labels[:, None] + rng.uniform(-width / 2.0, width / 2.0, size=(n, N_FEATURES))

    masks = np.zeros(n, dtype=np.int64)
    if config.missing_rate > 0:
        missing = rng.random((n, len(GROUND_COLUMNS))) < config.missing_rate
        for k, col in enumerate(GROUND_COLUMNS):
            X[missing[:, k], col] = 0.0
            masks[missing[:, k]] |= 1 << col
    return Dataset(X, labels, masks)
