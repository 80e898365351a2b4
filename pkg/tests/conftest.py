"""
pytest 公共配置
"""
import os
import sys

import numpy as np
import pytest

# 添加项目根目录到 Python 路径
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.grid_io import ReflectivityGrid  # noqa: E402

SMALL_SCENARIO = os.path.join(project_root, "scenarios", "small.cfg")


def blob_grid(timestamp: int = 0, centers=((10.0, 10.0),), size: int = 32, sigma: float = 3.0,
              peak: float = 55.0) -> ReflectivityGrid:
    """若干高斯反射率团组成的帧，中心坐标单位 km"""
    grid = ReflectivityGrid.from_array(timestamp, np.zeros((size, size)))
    x, y = grid.cell_centers()
    field = np.zeros((size, size))
    for cx, cy in centers:
        field = np.maximum(field, peak * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2)))
    return ReflectivityGrid.from_array(timestamp, field)


@pytest.fixture
def rng():
    return np.random.default_rng(2019)


@pytest.fixture
def small_scenario_path():
    return SMALL_SCENARIO
