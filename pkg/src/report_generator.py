"""
Report Generator - 混淆矩阵热力图、训练曲线与静态 HTML 报告
"""
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from dateutil import tz  # noqa: E402

from src.config import DAMAGE_CLASSES, SITE_META  # noqa: E402
from src.evaluation import ConfusionMatrix  # noqa: E402

# PNG 不写入版本信息，保证重复运行字节一致
_PNG_METADATA = {"Software": None}


@dataclass
class ModelSection:
    """报告中的一个模型"""

    name: str
    metrics: Dict[str, str]
    confusion: ConfusionMatrix
    history: Optional[pd.DataFrame] = None
    images: List[str] = field(default_factory=list)


class ReportGenerator:
    """静态报告生成器"""

    def __init__(self, output_dir: str):
        """
        初始化

        Args:
            output_dir: 输出目录
        """
        self.output_dir = Path(output_dir)
        self.meta = SITE_META
        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / "assets" / "css").mkdir(parents=True, exist_ok=True)

    def generate_all(self, sections: List[ModelSection], period: Optional[tuple] = None,
                     comparison: Optional[pd.DataFrame] = None) -> List[str]:
        """
        生成全部图像和页面

        Args:
            sections: 各模型的指标、混淆矩阵和训练记录
            period: (首帧时间戳, 末帧时间戳)
            comparison: metric × variant 对比表

        Returns:
            生成的文件路径
        """
        files = []
        for section in sections:
            heatmap = self.plot_confusion(section.confusion, section.name)
            section.images.append(heatmap.name)
            files.append(str(heatmap))
            if section.history is not None and len(section.history):
                curves = self.plot_history(section.history, section.name)
                section.images.append(curves.name)
                files.append(str(curves))

        files.append(self.generate_index(sections, period, comparison))
        files.append(self.generate_css())
        print(f"✅ 生成报告文件: {len(files)} 个")
        return files

    def plot_confusion(self, cm: ConfusionMatrix, name: str) -> Path:
        """按行归一化的混淆矩阵热力图"""
        normalized = cm.normalized()
        labels = [DAMAGE_CLASSES[c]["name_en"] for c in range(len(DAMAGE_CLASSES))]

        fig, ax = plt.subplots(figsize=(5.5, 4.5))
        image = ax.imshow(normalized, cmap="Blues", vmin=0.0, vmax=1.0)
        fig.colorbar(image, ax=ax)
        ax.set_xticks(range(len(labels)), labels=labels, rotation=30, ha="right")
        ax.set_yticks(range(len(labels)), labels=labels)
        ax.set_xlabel("Predicted class")
        ax.set_ylabel("True class")
        ax.set_title(f"Confusion matrix ({name})")
        for i in range(normalized.shape[0]):
            for j in range(normalized.shape[1]):
                color = "white" if normalized[i, j] > 0.5 else "black"
                ax.text(j, i, f"{normalized[i, j]:.2f}\n({cm.counts[i, j]})",
                        ha="center", va="center", color=color, fontsize=8)
        fig.tight_layout()

        path = self.output_dir / f"confusion_{name}.png"
        fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
        plt.close(fig)
        return path

    def plot_history(self, history: pd.DataFrame, name: str) -> Path:
        """训练/验证损失与准确率曲线"""
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
        ax_loss.plot(history["epoch"], history["loss"], label="training")
        ax_acc.plot(history["epoch"], history["accuracy"], label="training")
        if history["val_loss"].notna().any():
            ax_loss.plot(history["epoch"], history["val_loss"], label="validation")
            ax_acc.plot(history["epoch"], history["val_accuracy"], label="validation")
        ax_loss.set_title("Loss")
        ax_acc.set_title("Accuracy")
        for ax in (ax_loss, ax_acc):
            ax.set_xlabel("Epoch")
            ax.grid(alpha=0.3)
            ax.legend()
        fig.tight_layout()

        path = self.output_dir / f"history_{name}.png"
        fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
        plt.close(fig)
        return path

    def plot_class_histograms(self, histograms: Dict[str, np.ndarray], name: str = "classes") -> Path:
        """各数据集的类别直方图 (对数坐标)"""
        fig, ax = plt.subplots(figsize=(7, 4))
        width = 0.8 / max(1, len(histograms))
        classes = np.arange(len(DAMAGE_CLASSES))
        for k, (label, counts) in enumerate(histograms.items()):
            ax.bar(classes + k * width, np.maximum(counts, 0), width=width, label=label)
        ax.set_yscale("symlog")
        ax.set_xticks(classes + width * (len(histograms) - 1) / 2, labels=[str(c) for c in classes])
        ax.set_xlabel("Damage class")
        ax.set_ylabel("Samples")
        ax.legend()
        fig.tight_layout()

        path = self.output_dir / f"histogram_{name}.png"
        fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
        plt.close(fig)
        return path

    def generate_index(self, sections: List[ModelSection], period: Optional[tuple] = None,
                       comparison: Optional[pd.DataFrame] = None) -> str:
        """生成首页"""
        period_text = ""
        if period:
            start, end = (datetime.fromtimestamp(int(t), tz=tz.UTC).strftime("%Y-%m-%d %H:%M UTC") for t in period)
            period_text = f'<span class="date-badge">{start} → {end}</span>'

        comparison_html = ""
        if comparison is not None and len(comparison):
            comparison_html = f"""
            <section class="section">
                <div class="section-header">
                    <h2 class="section-title">Variant comparison</h2>
                </div>
                {comparison.to_html(float_format=lambda v: f"{v:.4f}", classes="metrics-table", border=0)}
            </section>
            """

        content = self._get_base_html("Report", f"""
        <header class="hero">
            <div class="hero-content">
                <h1 class="hero-title">{self.meta['title']}</h1>
                <p class="hero-subtitle">{self.meta['subtitle']}</p>
                <div class="hero-meta">{period_text}</div>
            </div>
        </header>

        <div class="container">
            {"".join(self._format_model_section(s) for s in sections)}
            {comparison_html}
        </div>
        """)

        path = self.output_dir / "index.html"
        path.write_text(content, encoding="utf-8")
        return str(path)

    def generate_css(self) -> str:
        """生成样式表"""
        css = """
:root {
    --bg: #ffffff;
    --text-primary: #111111;
    --text-secondary: #666666;
    --border: #eaeaea;
    --radius: 8px;
}

* { margin: 0; padding: 0; box-sizing: border-box; }

body {
    font-family: -apple-system, BlinkMacSystemFont, 'Inter', sans-serif;
    background-color: var(--bg);
    color: var(--text-primary);
    line-height: 1.6;
}

.container { max-width: 1100px; margin: 0 auto; padding: 0 24px; }
.nav { border-bottom: 1px solid var(--border); padding: 16px 0; }
.nav-logo { font-weight: 600; color: var(--text-primary); text-decoration: none; }
.hero { padding: 48px 24px 24px; text-align: center; }
.hero-title { font-size: 2rem; }
.hero-subtitle { color: var(--text-secondary); }
.date-badge { font-family: monospace; color: var(--text-secondary); }
.section { margin: 32px 0; }
.section-title { font-size: 1.25rem; margin-bottom: 12px; }
.metrics-table { border-collapse: collapse; margin-bottom: 16px; }
.metrics-table td, .metrics-table th { border: 1px solid var(--border); padding: 4px 12px; text-align: right; }
.figure-row { display: flex; flex-wrap: wrap; gap: 16px; }
.figure-row img { max-width: 100%; border: 1px solid var(--border); border-radius: var(--radius); }
.footer { color: var(--text-secondary); font-size: 0.875rem; padding: 32px 24px; text-align: center; }
"""
        path = self.output_dir / "assets" / "css" / "style.css"
        path.write_text(css.lstrip(), encoding="utf-8")
        return str(path)

    def _get_base_html(self, title: str, body_content: str) -> str:
        """生成基础 HTML 结构"""
        return f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{title} | {self.meta['title']}</title>
    <meta name="description" content="{self.meta['description']}">
    <link rel="stylesheet" href="assets/css/style.css">
</head>
<body>
    <nav class="nav">
        <div class="container nav-content">
            <a href="index.html" class="nav-logo">{self.meta['title']}</a>
        </div>
    </nav>

    <main>
        {body_content}
    </main>

    <footer class="footer container">
        <p>{self.meta['title']} · {self.meta['description']}</p>
    </footer>
</body>
</html>"""

    def _format_model_section(self, section: ModelSection) -> str:
        """格式化一个模型的指标表和图像"""
        rows = "".join(f"<tr><th>{k}</th><td>{v}</td></tr>" for k, v in section.metrics.items())
        images = "".join(f'<img src="{name}" alt="{name}">' for name in section.images)
        return f"""
        <section class="section">
            <div class="section-header">
                <h2 class="section-title">{section.name.upper()}</h2>
            </div>
            <table class="metrics-table">{rows}</table>
            <div class="figure-row">{images}</div>
        </section>
        """


def generate_report(sections: List[ModelSection], output_dir: str, period: Optional[tuple] = None,
                    comparison: Optional[pd.DataFrame] = None) -> List[str]:
    """便捷函数：生成报告"""
    generator = ReportGenerator(output_dir)
    return generator.generate_all(sections, period, comparison)
