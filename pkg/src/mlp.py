"""
MLP 分类器 - 16 → 20 → 16 → 8 → 4 全连接网络，ReLU + Dropout + Softmax，Adam 优化
"""
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import (
    ADAM_ALPHA, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
    MLP_BATCH_SIZE, MLP_DROPOUT, MLP_EPOCHS, SEED,
)
from src.dataset import Dataset, N_CLASSES, N_FEATURES

LAYER_SIZES = (N_FEATURES, 20, 16, 8, N_CLASSES)
DROPOUT_AFTER = (0, 1)  # 第一、第二隐藏层之后
Q_MIN = 1e-12
FORMAT_MAGIC = b"SCMLP v1\n"
HISTORY_COLUMNS = ("epoch", "loss", "accuracy", "val_loss", "val_accuracy")


class TrainingDivergedError(ValueError):
    """训练损失变为非有限值"""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"第 {epoch} 轮训练损失非有限: {loss} (epoch {epoch})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    """训练超参数"""

    batch_size: int = MLP_BATCH_SIZE
    epochs: int = MLP_EPOCHS
    dropout_p: float = MLP_DROPOUT
    seed: int = SEED
    alpha: float = ADAM_ALPHA
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size 必须 >= 1: {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs 必须 >= 1: {self.epochs}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p 必须在 [0, 1) 内: {self.dropout_p}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # out×in
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).ravel()
        if self.weights.ndim != 2 or self.bias.size != self.weights.shape[0]:
            raise ValueError(f"层形状不一致: W {self.weights.shape}, b {self.bias.shape}")


@dataclass
class MlpModel:
    """全连接网络，mode 为 train 时在前两个隐藏层后做 inverted dropout"""

    layers: List[DenseLayer]
    dropout_p: float = MLP_DROPOUT
    mode: str = "inference"

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ValueError(f"层形状无法衔接: {a.weights.shape} -> {b.weights.shape}")
        if self.mode not in ("train", "inference"):
            raise ValueError(f"mode 必须是 train|inference: {self.mode}")

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.layers[0].weights.shape[1],) + tuple(layer.weights.shape[0] for layer in self.layers)

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
        return params

    def parameter_names(self) -> List[str]:
        names = []
        for i in range(len(self.layers)):
            names.extend([f"W{i + 1}", f"b{i + 1}"])
        return names

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weights = params[2 * i]
            layer.bias = params[2 * i + 1]


def init_mlp(seed: int = SEED, layer_sizes: Sequence[int] = LAYER_SIZES, dropout_p: float = MLP_DROPOUT) -> MlpModel:
    """
    Glorot 均匀初始化，权重 ~ U(±√(6/(fan_in+fan_out)))，偏置为 0

    Args:
        seed: 随机种子
        layer_sizes: 各层节点数 (含输入层)
        dropout_p: dropout 比例

    Returns:
        网络
    """
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(DenseLayer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MlpModel(layers, dropout_p)


# ============================================================================
# 前向与损失
# ============================================================================

def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """inverted dropout 掩码: 保留的单元放大 1/(1-p)"""
    if p <= 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def _check_input(x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if not np.all(np.isfinite(X)):
        raise ValueError("输入包含非有限值")
    return X, single


def _forward_pass(model: MlpModel, X: np.ndarray, mode: str, rng: Optional[np.random.Generator]):
    """返回 (概率, 各层输入激活, 各隐藏层预激活, dropout 掩码)"""
    activations = [X]
    pre_activations = []
    masks: Dict[int, np.ndarray] = {}
    h = X
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = h @ layer.weights.T + layer.bias
        if i == last:
            return softmax(z), activations, pre_activations, masks
        pre_activations.append(z)
        h = relu(z)
        if mode == "train" and i in DROPOUT_AFTER and model.dropout_p > 0:
            if rng is None:
                raise ValueError("train 模式需要随机数发生器")
            masks[i] = dropout_mask(h.shape, model.dropout_p, rng)
            h = h * masks[i]
        activations.append(h)
    raise ValueError("网络没有层")


def forward(model: MlpModel, x, mode: Optional[str] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    前向计算类别概率

    Args:
        model: 网络
        x: 16 维向量或 n×16 矩阵
        mode: train|inference，默认使用 model.mode
        rng: train 模式下的 dropout 随机数发生器

    Returns:
        4 维概率向量或 n×4 矩阵
    """
    X, single = _check_input(x)
    probs, _, _, _ = _forward_pass(model, X, mode or model.mode, rng)
    return probs[0] if single else probs


def cross_entropy(p, q, class_weights: Optional[Sequence[float]] = None) -> float:
    """
    交叉熵 H(p, q) = -Σ w_i p_i ln q_i，q 截断到 [1e-12, 1]

    Args:
        p: 真实分布 (向量或 n×4)
        q: 预测概率
        class_weights: 类别权重，默认全为 1

    Returns:
        交叉熵 (矩阵输入时为样本均值)
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.clip(np.atleast_2d(np.asarray(q, dtype=np.float64)), Q_MIN, 1.0)
    w = np.ones(p.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    per_sample = -np.sum(w * p * np.log(q), axis=1)
    return float(per_sample.mean())


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    return np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]


def loss_and_gradients(model: MlpModel, X, Y, class_weights: Optional[Sequence[float]] = None,
                       mode: str = "inference",
                       rng: Optional[np.random.Generator] = None) -> Tuple[float, List[np.ndarray], np.ndarray]:
    """
    平均交叉熵及其对全部参数的解析梯度

    Args:
        model: 网络
        X: n×in 输入
        Y: n×4 目标分布
        class_weights: 类别权重
        mode: inference 时不做 dropout
        rng: train 模式的随机数发生器

    Returns:
        (损失, 与 model.parameters() 同序的梯度, 概率)
    """
    X, _ = _check_input(X)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n = X.shape[0]
    probs, activations, pre_activations, masks = _forward_pass(model, X, mode, rng)
    loss = cross_entropy(Y, probs, class_weights)

    w = np.ones(Y.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    weighted = Y * w
    delta = (weighted.sum(axis=1, keepdims=True) * probs - weighted) / n

    grads: List[np.ndarray] = [None] * (2 * len(model.layers))
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        grads[2 * i] = delta.T @ activations[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        dh = delta @ layer.weights
        if (i - 1) in masks:
            dh = dh * masks[i - 1]
        delta = dh * (pre_activations[i - 1] > 0)
    return loss, grads, probs


# ============================================================================
# Adam
# ============================================================================

@dataclass
class AdamState:
    """Adam 一阶/二阶矩与步数"""

    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    alpha: float = ADAM_ALPHA
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls([np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params],
                   [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params], **kwargs)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              names: Optional[Sequence[str]] = None) -> List[np.ndarray]:
    """
    一次 Adam 更新 (无学习率衰减)

    Args:
        state: 优化器状态 (原地更新)
        params: 参数
        grads: 梯度
        names: 参数块名称 (用于报错)

    Returns:
        更新后的参数
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("参数、梯度与优化器状态数量不一致")
    names = names or [f"param{i}" for i in range(len(params))]
    for name, p, g in zip(names, params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"梯度形状不匹配: {name} {np.shape(p)} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"梯度非有限: {name}")

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        updated.append(np.asarray(p, dtype=np.float64) - state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return updated


# ============================================================================
# 训练
# ============================================================================

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    val_loss: float = float("nan")
    val_accuracy: float = float("nan")


def evaluate_loss(model: MlpModel, data: Dataset, class_weights=None) -> Tuple[float, float]:
    """推理模式下的 (损失, 准确率)"""
    probs = forward(model, data.X, mode="inference")
    loss = cross_entropy(one_hot(data.labels), probs, class_weights)
    return loss, float(np.mean(np.argmax(probs, axis=1) == data.labels))


def train_mlp(train: Dataset, config: Optional[TrainConfig] = None, validation: Optional[Dataset] = None,
              class_weights: Optional[Sequence[float]] = None,
              log_every: int = 0, *,
              require_all_classes: bool = True) -> Tuple[MlpModel, List[EpochRecord]]:
    """
    小批量 Adam 训练

    Args:
        train: 训练集
        config: 超参数
        validation: 验证集，提供时记录 val_loss / val_accuracy
        class_weights: 交叉熵类别权重
        log_every: 每隔多少轮打印一次进度，0 表示不打印
        require_all_classes: 要求训练集包含全部 4 个损害等级

    Returns:
        (模型, 每轮记录)
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise ValueError("训练集为空")
    if require_all_classes:
        missing = [c for c, n in train.class_counts.items() if n == 0]
        if missing:
            raise ValueError(f"训练集缺少类别 {missing} (class {missing[0]})")

    model = init_mlp(config.seed, dropout_p=config.dropout_p)
    names = model.parameter_names()
    state = AdamState.for_params(model.parameters(), alpha=config.alpha, beta1=config.beta1,
                                 beta2=config.beta2, epsilon=config.epsilon)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])

    X, labels = train.X, train.labels
    Y = one_hot(labels)
    n = len(train)
    history: List[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads, probs = loss_and_gradients(model, X[batch], Y[batch], class_weights,
                                                    mode="train", rng=dropout_rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            model.set_parameters(adam_step(state, model.parameters(), grads, names))
            loss_sum += loss * batch.size
            correct += int(np.count_nonzero(np.argmax(probs, axis=1) == labels[batch]))

        record = EpochRecord(epoch, loss_sum / n, correct / n)
        if validation is not None and len(validation):
            record.val_loss, record.val_accuracy = evaluate_loss(model, validation, class_weights)
        history.append(record)

        if log_every and (epoch % log_every == 0 or epoch == config.epochs):
            print(f"   epoch {epoch}/{config.epochs}: loss={record.loss:.4f} acc={record.accuracy:.4f}"
                  f" val_loss={record.val_loss:.4f} val_acc={record.val_accuracy:.4f}")

    model.mode = "inference"
    return model, history


def predict_proba_batch(model: MlpModel, X) -> np.ndarray:
    return forward(model, np.atleast_2d(X), mode="inference")


def predict(model: MlpModel, X) -> np.ndarray:
    return np.argmax(predict_proba_batch(model, X), axis=1)


def write_history(history: List[EpochRecord], path: Union[str, Path]) -> None:
    """CSV: epoch,loss,accuracy,val_loss,val_accuracy"""
    frame = pd.DataFrame([vars(r) for r in history], columns=list(HISTORY_COLUMNS))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def read_history(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ============================================================================
# SCMLP v1 序列化
# ============================================================================

def mlp_to_bytes(model: MlpModel) -> bytes:
    sizes = model.layer_sizes
    chunks = [
        FORMAT_MAGIC,
        struct.pack("<id", len(sizes), model.dropout_p),
        np.asarray(sizes, dtype="<i4").tobytes(),
    ]
    for layer in model.layers:
        chunks.append(layer.weights.astype("<f8").tobytes())
        chunks.append(layer.bias.astype("<f8").tobytes())
    return b"".join(chunks)


def mlp_from_bytes(raw: bytes, source: str = "<bytes>") -> MlpModel:
    if not raw.startswith(FORMAT_MAGIC):
        raise ValueError(f"{source}: 不是 SCMLP v1 文件")
    offset = len(FORMAT_MAGIC)
    n_sizes, dropout_p = struct.unpack_from("<id", raw, offset)
    offset += 12
    sizes = np.frombuffer(raw, dtype="<i4", count=n_sizes, offset=offset).tolist()
    offset += 4 * n_sizes

    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        need = 8 * (fan_in * fan_out + fan_out)
        if offset + need > len(raw):
            raise ValueError(f"{source}: 文件在 offset {offset} 处截断")
        weights = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=offset).reshape(fan_out, fan_in)
        offset += 8 * fan_in * fan_out
        bias = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        layers.append(DenseLayer(weights, bias))
    if offset != len(raw):
        raise ValueError(f"{source}: offset {offset} 之后有多余数据")
    return MlpModel(layers, dropout_p)


def save_mlp(model: MlpModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(mlp_to_bytes(model))


def load_mlp(path: Union[str, Path]) -> MlpModel:
    path = Path(path)
    return mlp_from_bytes(path.read_bytes(), str(path))
