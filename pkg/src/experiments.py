"""
Experiments - 在同一划分上比较 RFC、MLP + SMOTE 与 MLP + SMOTE (仅完整样本)
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from src import forest, mlp
from src.config import PipelineConfig
from src.dataset import Dataset
from src.evaluation import MetricsReport, class_histogram, evaluate, split
from src.resample import smote

VARIANTS = ("rfc", "mlp_smote", "mlp_filt")


@dataclass
class ComparisonResult:
    reports: Dict[str, MetricsReport]
    histograms: Dict[str, np.ndarray]
    training_accuracy: Dict[str, float]

    def to_frame(self) -> pd.DataFrame:
        """metric × variant 表"""
        rows = {}
        for variant, report in self.reports.items():
            column = {
                "accuracy": report.accuracy,
                "auc": report.auc,
                "f1_micro": report.f1_micro,
                "training_accuracy": self.training_accuracy[variant],
            }
            for c, value in enumerate(report.per_class_accuracy):
                column[f"class_{c}_accuracy"] = value
            rows[variant] = column
        return pd.DataFrame(rows)


def run_comparison(dataset: Dataset, config: PipelineConfig) -> ComparisonResult:
    """
    训练并评估三种方案

    rfc: 原始训练集 (等类别权重)
    mlp_smote: SMOTE 平衡后的训练集
    mlp_filt: 仅保留无缺失值样本，再做 SMOTE

    Args:
        dataset: 带标签的全部样本
        config: 流水线配置 (seed, train_frac, n_trees, epochs, batch_size)

    Returns:
        各方案的验证集指标与类别直方图
    """
    train, validation = split(dataset, config.train_frac, config.seed)
    train_config = mlp.TrainConfig(batch_size=config.batch_size, epochs=config.epochs, seed=config.seed)

    reports: Dict[str, MetricsReport] = {}
    train_acc: Dict[str, float] = {}

    print(f"   [rfc] 训练 {config.n_trees} 棵树, {len(train)} 个样本")
    model = forest.fit_forest(train, config.n_trees, config.seed, n_jobs=config.n_jobs)
    scores = forest.predict_proba_batch(model, validation.X, n_jobs=config.n_jobs)
    reports["rfc"] = evaluate(validation.labels, np.argmax(scores, axis=1), scores)
    train_acc["rfc"] = forest.training_accuracy(model, train, n_jobs=config.n_jobs)

    balanced = smote(train, seed=config.seed)
    print(f"   [mlp_smote] SMOTE 后 {len(balanced)} 个样本")
    net, _ = mlp.train_mlp(balanced, train_config)
    scores = mlp.predict_proba_batch(net, validation.X)
    reports["mlp_smote"] = evaluate(validation.labels, np.argmax(scores, axis=1), scores)
    train_acc["mlp_smote"] = float(np.mean(mlp.predict(net, balanced.X) == balanced.labels))

    complete = train.subset(train.complete_indices())
    if len(complete) == 0:
        print("   ⚠️ [mlp_filt] 没有完整样本, 跳过")
    else:
        balanced_filt = smote(complete, seed=config.seed)
        print(f"   [mlp_filt] 完整样本 {len(complete)} 个, SMOTE 后 {len(balanced_filt)} 个")
        net, _ = mlp.train_mlp(balanced_filt, train_config)
        scores = mlp.predict_proba_batch(net, validation.X)
        reports["mlp_filt"] = evaluate(validation.labels, np.argmax(scores, axis=1), scores)
        train_acc["mlp_filt"] = float(np.mean(mlp.predict(net, balanced_filt.X) == balanced_filt.labels))

    histograms = {
        "original": class_histogram(train.labels),
        "synthetic": class_histogram(balanced.labels),
        "validation": class_histogram(validation.labels),
    }
    return ComparisonResult(reports, histograms, train_acc)


def write_comparison(result: ComparisonResult, path: Union[str, Path]) -> None:
    """每行: metric variant value"""
    frame = result.to_frame()
    lines = []
    for metric in frame.index:
        for variant in frame.columns:
            lines.append(f"{metric} {variant} {frame.loc[metric, variant]:.6f}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
