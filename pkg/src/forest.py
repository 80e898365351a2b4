"""
Random Forest - Gini 不纯度决策树森林 (不限树深、等类别权重)
"""
import struct
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from src.config import N_JOBS, N_TREES, SEED
from src.dataset import Dataset, N_CLASSES, N_FEATURES

FORMAT_MAGIC = b"SCFOREST v1\n"
MAX_FEATURES = int(np.floor(np.sqrt(N_FEATURES)))
MIN_DECREASE = 1e-12
LEAF = -1


def gini(histogram) -> float:
    """
    Gini 不纯度 Σ p_i (1 - p_i)

    Args:
        histogram: 类别计数

    Returns:
        不纯度，纯节点为 0
    """
    counts = np.asarray(histogram, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError(f"直方图包含负数: {histogram}")
    total = counts.sum()
    if total <= 0:
        raise ValueError("直方图全为零, 无法计算 Gini 不纯度")
    p = counts / total
    return float(np.sort(p * (1.0 - p)).sum())


@dataclass(eq=False)
class DecisionTree:
    """
    数组形式的决策树

    内部节点: feature >= 0，样本 x[feature] <= threshold 走 left
    叶子节点: feature == -1，counts 为落入的训练样本类别直方图
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1, N_CLASSES)
        totals = self.counts.sum(axis=1, keepdims=True)
        self.leaf_proba = np.where(totals > 0, self.counts / np.maximum(totals, 1), 0.0)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """逐层向量化下行，返回每个样本所在叶子"""
        node = np.zeros(X.shape[0], dtype=np.int32)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            current = node[active]
            feat = self.feature[current]
            go_left = X[active, feat] <= self.threshold[current]
            nxt = np.where(go_left, self.left[current], self.right[current])
            node[active] = nxt
            active = active[self.feature[nxt] != LEAF]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_proba[self.apply(X)]

    def equals(self, other: "DecisionTree") -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("feature", "threshold", "left", "right", "counts")
        )


@dataclass(eq=False)
class ForestModel:
    """随机森林"""

    trees: List[DecisionTree]
    n_trees: int
    seed: int
    feature_count: int = N_FEATURES
    class_count: int = N_CLASSES

    def __post_init__(self):
        if len(self.trees) != self.n_trees:
            raise ValueError(f"树数量 {len(self.trees)} 与 n_trees {self.n_trees} 不一致")
        for tree in self.trees:
            if tree.n_nodes and int(tree.feature.max()) >= self.feature_count:
                raise ValueError("决策树引用的特征下标越界")


# ============================================================================
# 训练
# ============================================================================

def _best_split(x: np.ndarray, onehot: np.ndarray, parent_gini: float) -> Optional[Tuple[float, float]]:
    """
    单个特征上的最佳阈值

    Returns:
        (不纯度下降, 阈值)；没有使不纯度下降的切分时返回 None
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return None

    m = xs.size
    left_counts = np.cumsum(onehot[order], axis=0)[valid]
    total = onehot.sum(axis=0)
    right_counts = total - left_counts
    n_left = (valid + 1).astype(np.float64)
    n_right = m - n_left

    pl = left_counts / n_left[:, None]
    pr = right_counts / n_right[:, None]
    # 按大小排序后求和，结果与类别编号无关
    gini_left = np.sort(pl * (1.0 - pl), axis=1).sum(axis=1)
    gini_right = np.sort(pr * (1.0 - pr), axis=1).sum(axis=1)
    weighted = (n_left * gini_left + n_right * gini_right) / m
    decrease = parent_gini - weighted

    best = int(np.argmax(decrease))
    if decrease[best] <= MIN_DECREASE:
        return None
    pos = valid[best]
    lo, hi = xs[pos], xs[pos + 1]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return float(decrease[best]), float(threshold)


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               max_features: int = MAX_FEATURES) -> DecisionTree:
    """
    不限深度地生长一棵树

    每个节点随机排列全部特征，先检查前 max_features 个；
    如果其中没有可用切分，则按排列顺序继续检查剩余特征。

    Args:
        X: 训练样本
        y: 标签
        rng: 随机数发生器
        max_features: 每个节点的候选特征数

    Returns:
        决策树
    """
    onehot = np.eye(N_CLASSES, dtype=np.float64)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(np.bincount(y[idx], minlength=N_CLASSES))
        return len(feature) - 1

    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        hist = counts[node]
        if np.count_nonzero(hist) <= 1:
            continue

        parent_gini = gini(hist)
        sub_onehot = onehot[idx]
        best = None
        for examined, f in enumerate(rng.permutation(N_FEATURES), 1):
            found = _best_split(X[idx, f], sub_onehot, parent_gini)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], found[1], int(f))
            if best is not None and examined >= max_features:
                break
        if best is None:
            continue

        _, thr, f = best
        go_left = X[idx, f] <= thr
        left_idx, right_idx = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx))
        stack.append((left[node], left_idx))

    return DecisionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(counts))


def _fit_one(args) -> DecisionTree:
    X, y, seed, tree_index = args
    rng = np.random.default_rng([seed, tree_index])
    sample = rng.integers(0, y.size, size=y.size)
    return build_tree(X[sample], y[sample], rng)


def fit_forest(train: Dataset, n_trees: int = N_TREES, seed: int = SEED, n_jobs: int = 1) -> ForestModel:
    """
    训练随机森林，每棵树使用独立子种子的 bootstrap 样本

    Args:
        train: 训练集
        n_trees: 树的数量
        seed: 随机种子
        n_jobs: 训练进程数 (结果与顺序训练相同)

    Returns:
        森林模型
    """
    if len(train) == 0:
        raise ValueError("训练集为空")
    if n_trees < 1:
        raise ValueError(f"n_trees 必须 >= 1: {n_trees}")

    tasks = [(train.X, train.labels, seed, i) for i in range(n_trees)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(_fit_one, tasks))
    else:
        trees = [_fit_one(task) for task in tasks]
    return ForestModel(trees, n_trees, seed)


# ============================================================================
# 预测
# ============================================================================

def _check_input(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"输入应为 n×{N_FEATURES}, 实际 {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("输入包含非有限值")
    return X


def predict_proba_batch(model: ForestModel, X, n_jobs: int = N_JOBS) -> np.ndarray:
    """
    批量预测类别概率 (各树叶子分布的平均)

    Args:
        model: 森林
        X: n×16 样本
        n_jobs: 线程数

    Returns:
        n×4 概率
    """
    X = _check_input(X)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda tree: tree.predict_proba(X), model.trees))
    else:
        parts = [tree.predict_proba(X) for tree in model.trees]

    total = np.zeros((X.shape[0], model.class_count))
    for part in parts:
        total += part
    return total / model.n_trees


def predict_proba_forest(model: ForestModel, x) -> np.ndarray:
    """单个样本的类别概率"""
    return predict_proba_batch(model, x, n_jobs=1)[0]


def predict(model: ForestModel, X, n_jobs: int = N_JOBS) -> np.ndarray:
    """argmax，并列时取较小类别"""
    return np.argmax(predict_proba_batch(model, X, n_jobs), axis=1)


def training_accuracy(model: ForestModel, data: Dataset, n_jobs: int = N_JOBS) -> float:
    if len(data) == 0:
        raise ValueError("数据集为空")
    return float(np.mean(predict(model, data.X, n_jobs) == data.labels))


# ============================================================================
# SCFOREST v1 序列化
# ============================================================================

def forest_to_bytes(model: ForestModel) -> bytes:
    chunks = [
        FORMAT_MAGIC,
        struct.pack("<iqii", model.n_trees, model.seed, model.feature_count, model.class_count),
    ]
    for tree in model.trees:
        chunks.append(struct.pack("<i", tree.n_nodes))
        chunks.append(tree.feature.astype("<i4").tobytes())
        chunks.append(tree.threshold.astype("<f8").tobytes())
        chunks.append(tree.left.astype("<i4").tobytes())
        chunks.append(tree.right.astype("<i4").tobytes())
        chunks.append(tree.counts.astype("<i8").tobytes())
    return b"".join(chunks)


def forest_from_bytes(raw: bytes, source: str = "<bytes>") -> ForestModel:
    if not raw.startswith(FORMAT_MAGIC):
        raise ValueError(f"{source}: 不是 SCFOREST v1 文件")
    offset = len(FORMAT_MAGIC)

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise ValueError(f"{source}: 文件在 offset {offset} 处截断")
        chunk = raw[offset:offset + n]
        offset += n
        return chunk

    n_trees, seed, feature_count, class_count = struct.unpack("<iqii", take(20))
    if class_count != N_CLASSES:
        raise ValueError(f"{source}: 类别数 {class_count} 不受支持")
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack("<i", take(4))
        feature = np.frombuffer(take(4 * n), dtype="<i4")
        threshold = np.frombuffer(take(8 * n), dtype="<f8")
        left = np.frombuffer(take(4 * n), dtype="<i4")
        right = np.frombuffer(take(4 * n), dtype="<i4")
        counts = np.frombuffer(take(8 * n * class_count), dtype="<i8").reshape(n, class_count)
        trees.append(DecisionTree(feature, threshold, left, right, counts))
    if offset != len(raw):
        raise ValueError(f"{source}: offset {offset} 之后有多余数据")
    return ForestModel(trees, n_trees, seed, feature_count, class_count)


def save_forest(model: ForestModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(forest_to_bytes(model))


def load_forest(path: Union[str, Path]) -> ForestModel:
    path = Path(path)
    return forest_from_bytes(path.read_bytes(), str(path))
