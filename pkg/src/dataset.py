"""
数据集 - 16 维特征样本容器与 CSV 读写
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

# Table-2 特征顺序
FEATURE_NAMES = (
    "area_km2",
    "age_seconds",
    "lightning_density_per_km2",
    "max_dbz",
    "min_dbz",
    "mean_dbz",
    "median_dbz",
    "std_dbz",
    "lat",
    "lon",
    "temperature_c",
    "pressure_hpa",
    "wind_speed_ms",
    "wind_dir_deg",
    "precip_mm",
    "snow_depth_cm",
)
N_FEATURES = len(FEATURE_NAMES)
N_CLASSES = 4
CSV_COLUMNS = FEATURE_NAMES + ("mask", "label")


class DatasetFormatError(ValueError):
    """数据集 CSV 格式错误"""


@dataclass(frozen=True)
class LabeledSample:
    """一个带标签的风暴单体样本"""

    features: Tuple[float, ...]
    label: int
    mask: int = 0
    timestamp: int = 0
    cell_id: int = -1
    track_id: int = -1

    @property
    def is_complete(self) -> bool:
        return self.mask == 0


@dataclass(eq=False)
class Dataset:
    """
    样本矩阵

    X: n×16 float64，缺失值已填 0
    labels: n 个类别 (0-3)
    masks: n 个 16 位缺失掩码，第 j 位对应特征 j
    """

    X: np.ndarray
    labels: np.ndarray
    masks: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.size == 0:
            X = X.reshape(0, N_FEATURES)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise ValueError(f"特征矩阵应为 n×{N_FEATURES}, 实际 {X.shape}")
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if labels.size != X.shape[0]:
            raise ValueError(f"标签数量 {labels.size} 与样本数 {X.shape[0]} 不一致")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ValueError(f"标签必须在 0..{N_CLASSES - 1} 之间")
        if not np.all(np.isfinite(X)):
            raise ValueError("特征矩阵包含非有限值")
        if self.masks is None:
            masks = np.zeros(labels.size, dtype=np.int64)
        else:
            masks = np.array(self.masks, dtype=np.int64).ravel()
            if masks.size != labels.size:
                raise ValueError(f"掩码数量 {masks.size} 与样本数 {labels.size} 不一致")
        self.X, self.labels, self.masks = X, labels, masks

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def class_counts(self) -> Dict[int, int]:
        counts = np.bincount(self.labels, minlength=N_CLASSES)
        return {c: int(counts[c]) for c in range(N_CLASSES)}

    @property
    def samples(self) -> List[Tuple[Tuple[float, ...], int]]:
        return [(tuple(row), int(label)) for row, label in zip(self.X.tolist(), self.labels)]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.labels[idx], self.masks[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.masks, other.masks]),
        )

    def complete_indices(self) -> np.ndarray:
        """无缺失值样本的下标"""
        return np.flatnonzero(self.masks == 0)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.X.shape == other.X.shape
            and self.X.tobytes() == other.X.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.masks, other.masks)
        )

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            np.array([s.features for s in samples], dtype=np.float64),
            np.array([s.label for s in samples], dtype=np.int64),
            np.array([s.mask for s in samples], dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64))


def mask_to_hex(mask: int) -> str:
    return f"{int(mask):04x}"


def mask_bits(flags: Sequence[bool]) -> int:
    """布尔缺失标记转 16 位掩码"""
    value = 0
    for j, flag in enumerate(flags):
        if flag:
            value |= 1 << j
    return value


def write_dataset(data: Dataset, path: Union[str, Path]) -> None:
    """
    写出 CSV: 16 个特征列、mask (4 位十六进制)、label

    Args:
        data: 数据集
        path: 输出路径
    """
    frame = pd.DataFrame(data.X, columns=list(FEATURE_NAMES))
    frame["mask"] = [mask_to_hex(m) for m in data.masks]
    frame["label"] = data.labels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def read_dataset(path: Union[str, Path]) -> Dataset:
    """
    读取 write_dataset 的输出

    Args:
        path: CSV 路径

    Returns:
        数据集
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"mask": str}, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(f"{path}: 文件为空, 缺少表头")

    if tuple(frame.columns) != CSV_COLUMNS:
        raise DatasetFormatError(f"{path}: 表头不符, 期望 {','.join(CSV_COLUMNS)}")
    try:
        masks = [int(m, 16) for m in frame["mask"]]
    except (TypeError, ValueError) as e:
        raise DatasetFormatError(f"{path}: mask 列无法解析: {e}")

    try:
        return Dataset(frame[list(FEATURE_NAMES)].to_numpy(dtype=np.float64),
                       frame["label"].to_numpy(dtype=np.int64), masks)
    except ValueError as e:
        raise DatasetFormatError(f"{path}: {e}")
