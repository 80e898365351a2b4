"""
SMOTE 过采样 - 用同类 k 近邻插值生成少数类样本，使各类别样本数相等
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from src.config import SEED, SMOTE_K
from src.dataset import Dataset, N_CLASSES


class SmoteError(ValueError):
    """少数类样本不足以插值"""


@dataclass(frozen=True)
class SyntheticRecord:
    """合成样本来源: 原样本 i、近邻 zi (原数据集下标) 与插值系数"""

    label: int
    i: int
    zi: int
    lam: float


def nearest_neighbours(X: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """
    暴力 k 近邻 (欧氏距离，不含自身)

    Args:
        X: m×d 样本
        k: 近邻数 (<= m-1)
        chunk: 每批计算的行数

    Returns:
        m×k 下标，按距离升序，距离相同取下标较小者
    """
    m = X.shape[0]
    result = np.empty((m, k), dtype=np.int64)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        d2 = cdist(X[start:stop], X, "sqeuclidean")
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        result[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return result


def interpolate(a: np.ndarray, b: np.ndarray, lam) -> np.ndarray:
    """a + λ (b - a)，逐坐标限制在 [min(a, b), max(a, b)] 内"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1 and a.ndim == 2:
        lam = lam[:, None]
    return np.clip(a + lam * (b - a), np.minimum(a, b), np.maximum(a, b))


def smote_with_provenance(data: Dataset, k: int = SMOTE_K,
                          seed: int = SEED) -> Tuple[Dataset, List[SyntheticRecord]]:
    """
    SMOTE: x_new = x_i + λ (x_zi - x_i)，λ ~ U[0, 1)

    每个非多数类补足到多数类样本数。原样本保持不变且排在前面，
    合成样本按类别升序追加。任一少数类少于 2 个样本 (含 0 个) 时报错。

    Args:
        data: 训练集
        k: 近邻数，超过类样本数-1 时截断并警告
        seed: 随机种子，每个类别独立的随机流

    Returns:
        (平衡后的数据集, 合成样本来源记录)
    """
    if k < 1:
        raise SmoteError(f"k 必须 >= 1: {k}")
    if len(data) == 0:
        raise SmoteError("数据集为空")

    counts = data.class_counts
    target = max(counts.values())

    new_X, new_labels, new_masks = [], [], []
    records: List[SyntheticRecord] = []
    for c in range(N_CLASSES):
        n_c = counts[c]
        if n_c == target:
            continue
        if n_c < 2:
            raise SmoteError(f"类别 {c} 只有 {n_c} 个样本, SMOTE 至少需要 2 个 (class {c})")

        k_eff = k
        if k > n_c - 1:
            k_eff = n_c - 1
            print(f"   ⚠️ 类别 {c} 只有 {n_c} 个样本, k 从 {k} 截断为 {k_eff}")

        idx = np.flatnonzero(data.labels == c)
        Xc = data.X[idx]
        neighbours = nearest_neighbours(Xc, k_eff)

        rng = np.random.default_rng([seed, c])
        deficit = target - n_c
        base = rng.integers(0, n_c, size=deficit)
        pick = rng.integers(0, k_eff, size=deficit)
        lam = rng.random(deficit)
        other = neighbours[base, pick]

        synthetic = interpolate(Xc[base], Xc[other], lam)

        new_X.append(synthetic)
        new_labels.append(np.full(deficit, c, dtype=np.int64))
        new_masks.append(data.masks[idx[base]] | data.masks[idx[other]])
        records.extend(
            SyntheticRecord(c, int(idx[i]), int(idx[z]), float(l))
            for i, z, l in zip(base, other, lam)
        )

    if not new_X:
        return data, []

    synthetic = Dataset(np.vstack(new_X), np.concatenate(new_labels), np.concatenate(new_masks))
    return data.concat(synthetic), records


def smote(data: Dataset, k: int = SMOTE_K, seed: int = SEED) -> Dataset:
    """SMOTE 平衡，只返回数据集"""
    balanced, _ = smote_with_provenance(data, k, seed)
    return balanced


def write_provenance(records: List[SyntheticRecord], path: Union[str, Path]) -> None:
    """每个合成样本一行: class i zi lambda"""
    lines = [f"{r.label} {r.i} {r.zi} {r.lam!r}" for r in records]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
