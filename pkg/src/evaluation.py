"""
Evaluation - 训练/验证集划分、混淆矩阵、准确率、One-vs-Rest AUC 与 micro F1
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from src.config import SEED, TRAIN_FRAC
from src.dataset import Dataset, N_CLASSES


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """4×4 计数矩阵，行为真实类别，列为预测类别"""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"混淆矩阵应为 {N_CLASSES}×{N_CLASSES}, 实际 {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("混淆矩阵包含负数")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def normalized(self) -> np.ndarray:
        """按行归一化，空行为 0"""
        rows = self.supports[:, None].astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros((N_CLASSES, N_CLASSES)), where=rows > 0)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    auc: float
    f1_micro: float
    per_class_accuracy: Tuple[float, ...]
    confusion: ConfusionMatrix = field(compare=False)
    n_samples: int = 0


def split(data: Dataset, train_frac: float = TRAIN_FRAC, seed: int = SEED) -> Tuple[Dataset, Dataset]:
    """
    随机打乱后划分训练/验证集 (不分层)

    Args:
        data: 全部样本
        train_frac: 训练集比例
        seed: 随机种子

    Returns:
        (训练集 ⌊n·train_frac⌋ 个, 验证集 其余)
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac 必须在 (0, 1) 内: {train_frac}")
    n = len(data)
    if n < 2:
        raise ValueError(f"样本数不足以划分: n={n}")
    n_train = int(np.floor(n * train_frac))
    if n_train == 0 or n_train == n:
        raise ValueError(f"划分后训练集或验证集为空: n={n}, train_frac={train_frac}")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def confusion(true: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
    """
    统计混淆矩阵

    Args:
        true: 真实类别
        pred: 预测类别

    Returns:
        ConfusionMatrix
    """
    t = np.asarray(true, dtype=np.int64).ravel()
    p = np.asarray(pred, dtype=np.int64).ravel()
    if t.size != p.size:
        raise ValueError(f"长度不一致: true {t.size}, pred {p.size}")
    for name, values in (("true", t), ("pred", p)):
        if values.size and (values.min() < 0 or values.max() >= N_CLASSES):
            raise ValueError(f"{name} 中存在 0..{N_CLASSES - 1} 之外的类别")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def per_class_accuracy(cm: ConfusionMatrix) -> Tuple[float, ...]:
    """对角线 / 行和，没有样本的类别为 NaN"""
    supports = cm.supports
    return tuple(
        float(cm.counts[c, c] / supports[c]) if supports[c] else float("nan")
        for c in range(N_CLASSES)
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("混淆矩阵为空")
    return cm.trace / cm.total


def f1_micro(cm: ConfusionMatrix) -> float:
    """
    micro 平均 F1: 汇总全部类别的 TP / FP / FN 后计算

    Returns:
        2TP / (2TP + FP + FN)
    """
    if cm.total == 0:
        raise ValueError("混淆矩阵为空")
    tp = fp = fn = 0
    for c in range(N_CLASSES):
        tp += int(cm.counts[c, c])
        fp += int(cm.counts[:, c].sum() - cm.counts[c, c])
        fn += int(cm.counts[c, :].sum() - cm.counts[c, c])
    return (2 * tp) / (2 * tp + fp + fn)


def auc_ovr(true: Sequence[int], scores) -> float:
    """
    One-vs-Rest ROC AUC 的宏平均 (秩统计量，并列计 0.5)

    Args:
        true: 真实类别
        scores: n×4 概率

    Returns:
        各类别 AUC 的平均；没有正例或负例的类别跳过并警告，全部跳过时为 NaN
    """
    t = np.asarray(true, dtype=np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape != (t.size, N_CLASSES):
        raise ValueError(f"scores 应为 {t.size}×{N_CLASSES}, 实际 {s.shape}")

    aucs = []
    for c in range(N_CLASSES):
        pos = t == c
        n_pos = int(pos.sum())
        n_neg = t.size - n_pos
        if n_pos == 0 or n_neg == 0:
            print(f"   ⚠️ 类别 {c} 没有{'正' if n_pos == 0 else '负'}例, AUC 跳过该类别")
            continue
        ranks = rankdata(s[:, c], method="average")
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(u / (n_pos * n_neg))

    if not aucs:
        print("   ⚠️ 没有同时具备正例和负例的类别, AUC 记为 NaN")
        return float("nan")
    return float(np.mean(aucs))


def class_histogram(labels: Sequence[int]) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=N_CLASSES)


def evaluate(true: Sequence[int], pred: Sequence[int], scores) -> MetricsReport:
    """汇总全部指标"""
    cm = confusion(true, pred)
    return MetricsReport(
        accuracy=accuracy(cm),
        auc=auc_ovr(true, scores),
        f1_micro=f1_micro(cm),
        per_class_accuracy=per_class_accuracy(cm),
        confusion=cm,
        n_samples=cm.total,
    )


# ============================================================================
# 输出
# ============================================================================

def write_metrics(report: MetricsReport, path: Union[str, Path],
                  extra: Optional[Dict[str, object]] = None) -> None:
    """key: value 文本"""
    lines = [
        f"accuracy: {report.accuracy:.6f}",
        f"auc: {report.auc:.6f}",
        f"f1_micro: {report.f1_micro:.6f}",
    ]
    for c, value in enumerate(report.per_class_accuracy):
        lines.append(f"per_class_accuracy_{c}: {value:.6f}")
    lines.append(f"n_samples: {report.n_samples}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value:.6f}" if isinstance(value, float) else f"{key}: {value}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path: Union[str, Path]) -> Dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            values[key.strip()] = value.strip()
    return values


def write_confusion(cm: ConfusionMatrix, path: Union[str, Path]) -> None:
    """CSV，行 true_c，列 pred_c"""
    frame = pd.DataFrame(
        cm.counts,
        index=[f"true_{c}" for c in range(N_CLASSES)],
        columns=[f"pred_{c}" for c in range(N_CLASSES)],
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index_label="class", lineterminator="\n")


def read_confusion(path: Union[str, Path]) -> ConfusionMatrix:
    frame = pd.read_csv(path, index_col="class")
    return ConfusionMatrix(frame.to_numpy(dtype=np.int64))
