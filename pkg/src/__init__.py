"""
Storm Damage Nowcast - 风暴单体电网损害分级
雷达反射率帧 → 风暴单体检测与追踪 → 特征与停电标注 → RFC / MLP 分类与评估报告
"""

__version__ = "1.0.0"
__author__ = "Storm Damage Nowcast"
