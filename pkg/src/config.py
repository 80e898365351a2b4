"""
配置模块 - 风暴单体损害预测流水线配置管理
环境变量提供默认值，key=value 配置文件和命令行参数依次覆盖
"""
import os
import math
from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Dict, Optional


class ConfigError(ValueError):
    """配置文件或参数不合法"""


def _get_env_int(key: str, default: int) -> int:
    """获取整数环境变量，处理空字符串情况"""
    value = os.getenv(key)
    if value is None or value == "":
        return default
    return int(value)


def _get_env_float(key: str, default: float) -> float:
    """获取浮点数环境变量，处理空字符串和无效值情况"""
    value = os.getenv(key)
    if value is None or value == "":
        return default
    try:
        return float(value)
    except ValueError:
        return default


# ============================================================================
# 路径配置
# ============================================================================
STORE_DIR = os.getenv("STORE_DIR", "data/store")
FRAMES_DIR = os.getenv("FRAMES_DIR", "data/frames")
MODELS_DIR = os.getenv("MODELS_DIR", "data/models")

# ============================================================================
# 检测配置 (35 dBZ 等值线, DBSCAN 面积阈值 20 km², 邻域半径 2 km)
# ============================================================================
THRESHOLD_DBZ = _get_env_float("THRESHOLD_DBZ", 35.0)
AREA_LIMIT_KM2 = _get_env_float("AREA_LIMIT_KM2", 20.0)
RADIUS_KM = _get_env_float("RADIUS_KM", 2.0)

# ============================================================================
# 追踪配置 (Horn-Schunck 光流)
# ============================================================================
FLOW_ALPHA = _get_env_float("FLOW_ALPHA", 1.0)
FLOW_ITERATIONS = _get_env_int("FLOW_ITERATIONS", 100)
MAX_MATCH_KM = _get_env_float("MAX_MATCH_KM", 10.0)
STEP_SECONDS = _get_env_int("STEP_SECONDS", 300)
FORECAST_STEPS = 24  # 2 小时, 5 分钟分辨率

# ============================================================================
# 特征与标签配置
# ============================================================================
LABEL_WINDOW_S = _get_env_int("LABEL_WINDOW_S", 300)
LIGHTNING_WINDOW_S = 300

# ============================================================================
# 训练配置
# ============================================================================
SEED = _get_env_int("SEED", 2019)
TRAIN_FRAC = _get_env_float("TRAIN_FRAC", 0.75)
N_TREES = _get_env_int("N_TREES", 100)
N_JOBS = _get_env_int("N_JOBS", 1)
SMOTE_K = 5

# MLP 超参数
MLP_EPOCHS = _get_env_int("MLP_EPOCHS", 1000)
MLP_BATCH_SIZE = _get_env_int("MLP_BATCH_SIZE", 256)
MLP_DROPOUT = 0.10
ADAM_ALPHA = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

MODEL_KINDS = ("rfc", "mlp")

# ============================================================================
# 损害等级定义 (变压器停电比例)
# ============================================================================
DAMAGE_CLASSES = {
    0: {"name": "无损害", "name_en": "no damage", "share": "0 %"},
    1: {"name": "轻微", "name_en": "minor", "share": "0 - 10 %"},
    2: {"name": "中等", "name_en": "moderate", "share": "10 - 50 %"},
    3: {"name": "严重", "name_en": "severe", "share": "50 - 100 %"},
}

# 报告页面元信息
SITE_META = {
    "title": "Storm Damage Nowcast",
    "subtitle": "风暴单体电网损害分级",
    "description": "雷达风暴单体检测、追踪与电网损害等级分类报告",
}


@dataclass
class PipelineConfig:
    """流水线配置，字段名即配置文件 key"""

    store_dir: str = STORE_DIR
    frames_dir: str = FRAMES_DIR
    models_dir: str = MODELS_DIR
    step_seconds: int = STEP_SECONDS

    threshold_dbz: float = THRESHOLD_DBZ
    area_limit: float = AREA_LIMIT_KM2
    radius: float = RADIUS_KM

    alpha: float = FLOW_ALPHA
    iterations: int = FLOW_ITERATIONS
    max_match_km: float = MAX_MATCH_KM

    label_window_s: int = LABEL_WINDOW_S

    model: str = "rfc"
    smote: bool = True
    filter_complete: bool = False
    seed: int = SEED
    n_trees: int = N_TREES
    n_jobs: int = N_JOBS
    epochs: int = MLP_EPOCHS
    batch_size: int = MLP_BATCH_SIZE

    train_frac: float = TRAIN_FRAC

    def validate(self) -> "PipelineConfig":
        """
        校验参数范围

        Returns:
            自身 (便于链式调用)
        """
        errors = []
        if not math.isfinite(self.threshold_dbz):
            errors.append("threshold_dbz 必须为有限值")
        if not self.area_limit > 0:
            errors.append("area_limit 必须 > 0")
        if not self.radius > 0:
            errors.append("radius 必须 > 0")
        if not self.alpha > 0:
            errors.append("alpha 必须 > 0")
        if self.iterations < 1:
            errors.append("iterations 必须 >= 1")
        if not self.max_match_km > 0:
            errors.append("max_match_km 必须 > 0")
        if self.step_seconds < 1:
            errors.append("step_seconds 必须 >= 1")
        if self.label_window_s < 0:
            errors.append("label_window_s 必须 >= 0")
        if not 0 < self.train_frac < 1:
            errors.append("train_frac 必须在 (0, 1) 内")
        if self.n_trees < 1:
            errors.append("n_trees 必须 >= 1")
        if self.n_jobs < 1:
            errors.append("n_jobs 必须 >= 1")
        if self.epochs < 1:
            errors.append("epochs 必须 >= 1")
        if self.batch_size < 1:
            errors.append("batch_size 必须 >= 1")
        if self.model not in MODEL_KINDS:
            errors.append(f"model 必须是 {'|'.join(MODEL_KINDS)} 之一, 当前: {self.model}")

        if errors:
            raise ConfigError("配置错误: " + "; ".join(errors))
        return self

    def to_text(self) -> str:
        """序列化为 key=value 文本"""
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, target_type, key: str, where: str):
    """把字符串转换为字段类型"""
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key} 的值无法解析: {raw!r}")


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    解析 key=value 文本

    Args:
        text: 文件内容
        source: 来源名称 (用于报错)

    Returns:
        {key: raw_value}
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: 缺少 '=': {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def apply_overrides(config: PipelineConfig, overrides: Dict[str, object], source: str = "<overrides>") -> PipelineConfig:
    """
    用字典覆盖配置字段，字符串值按字段类型转换

    Args:
        config: 基础配置
        overrides: {field: value}，值为 None 的项跳过
        source: 来源名称 (用于报错)

    Returns:
        新的配置对象
    """
    field_types = {f.name: f.type for f in fields(PipelineConfig)}
    type_map = {"int": int, "float": float, "bool": bool, "str": str}
    updated = asdict(config)

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in field_types:
            raise ConfigError(f"{source}: 未知配置项 {key!r}")
        ftype = field_types[key]
        ftype = type_map.get(ftype, ftype) if isinstance(ftype, str) else ftype
        if isinstance(value, str):
            value = _coerce(value, ftype, key, source)
        updated[key] = value

    return PipelineConfig(**updated)


def load_config_file(path: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """
    加载 key=value 配置文件

    Args:
        path: 配置文件路径
        base: 基础配置，默认使用环境变量默认值

    Returns:
        校验后的配置
    """
    text = Path(path).read_text(encoding="utf-8")
    values = parse_key_values(text, source=str(path))
    config = apply_overrides(base or PipelineConfig(), values, source=str(path))
    return config.validate()


def get_damage_class_info(value: int) -> dict:
    """获取损害等级信息"""
    return DAMAGE_CLASSES[int(value)]
