"""
流水线存储模块
各阶段产物存放在 <store_dir>/<stage>/<name>，SQLite 清单记录路径与 SHA-256
"""
import hashlib
import sqlite3
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

from src.config import STORE_DIR

MANIFEST_NAME = "manifest.db"


class MissingArtifactError(FileNotFoundError):
    """上游产物缺失或内容与清单不符"""


def file_digest(path: Union[str, Path]) -> str:
    """文件 SHA-256"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Store:
    """文件存储 + SQLite 清单"""

    def __init__(self, store_dir: str = None):
        """
        初始化存储

        Args:
            store_dir: 存储目录，默认使用配置中的路径
        """
        self.store_dir = Path(store_dir or STORE_DIR)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.db_path = self.store_dir / MANIFEST_NAME
        self.conn = None

    def connect(self):
        """建立清单数据库连接"""
        if self.conn is None:
            self.conn = sqlite3.connect(self.db_path)
            self.conn.row_factory = sqlite3.Row

    def close(self):
        """关闭连接"""
        if self.conn:
            self.conn.close()
            self.conn = None

    def __enter__(self):
        self.init_db()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def init_db(self) -> None:
        """初始化清单表"""
        self.connect()
        cursor = self.conn.cursor()

        # 1. artifacts - 阶段产物
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS artifacts (
                stage TEXT NOT NULL,
                name TEXT NOT NULL,
                path TEXT NOT NULL,
                sha256 TEXT NOT NULL,
                size INTEGER NOT NULL,
                updated_at TEXT NOT NULL,
                PRIMARY KEY (stage, name)
            )
        """)

        # 2. stage_runs - 阶段运行记录
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS stage_runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                stage TEXT NOT NULL,
                summary TEXT,
                elapsed_s REAL NOT NULL,
                finished_at TEXT NOT NULL
            )
        """)

        cursor.execute("CREATE INDEX IF NOT EXISTS idx_artifacts_stage ON artifacts(stage)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_runs_stage ON stage_runs(stage)")
        self.conn.commit()

    def path_for(self, stage: str, name: str) -> Path:
        """产物路径 (自动创建阶段目录)"""
        path = self.store_dir / stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def register(self, stage: str, name: str, path: Optional[Union[str, Path]] = None) -> str:
        """
        登记产物

        Args:
            stage: 阶段名
            name: 产物名
            path: 存储目录之外的文件 (帧、模型)，默认为 path_for(stage, name)

        Returns:
            SHA-256
        """
        self.init_db()
        path = Path(path) if path is not None else self.store_dir / stage / name
        if not path.is_file():
            raise MissingArtifactError(f"登记的产物不存在: {path}")
        digest = file_digest(path)
        self.conn.execute(
            """
            INSERT OR REPLACE INTO artifacts (stage, name, path, sha256, size, updated_at)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            (stage, name, str(path), digest, path.stat().st_size, _now()),
        )
        self.conn.commit()
        return digest

    def require(self, stage: str, name: str) -> Path:
        """
        获取上游产物路径，校验存在性与摘要

        Raises:
            MissingArtifactError: 未登记、文件不存在或内容被修改
        """
        self.init_db()
        row = self.conn.execute(
            "SELECT path, sha256 FROM artifacts WHERE stage = ? AND name = ?", (stage, name)
        ).fetchone()
        expected_path = self.store_dir / stage / name
        if row is None:
            raise MissingArtifactError(f"缺少上游产物 {stage}/{name} ({expected_path}), 请先运行 {stage} 阶段")
        path = Path(row["path"])
        if not path.is_file():
            raise MissingArtifactError(f"缺少上游产物文件: {path}")
        if file_digest(path) != row["sha256"]:
            raise MissingArtifactError(f"产物内容与清单不符: {path}, 请重新运行 {stage} 阶段")
        return path

    def has(self, stage: str, name: str) -> bool:
        try:
            self.require(stage, name)
            return True
        except MissingArtifactError:
            return False

    def artifacts(self, stage: Optional[str] = None) -> List[Dict]:
        """列出已登记产物"""
        self.init_db()
        if stage is None:
            rows = self.conn.execute("SELECT * FROM artifacts ORDER BY stage, name").fetchall()
        else:
            rows = self.conn.execute(
                "SELECT * FROM artifacts WHERE stage = ? ORDER BY name", (stage,)
            ).fetchall()
        return [dict(row) for row in rows]

    def clear_stage(self, stage: str) -> int:
        """删除某阶段的登记记录，返回删除数量"""
        self.init_db()
        cursor = self.conn.execute("DELETE FROM artifacts WHERE stage = ?", (stage,))
        self.conn.commit()
        return cursor.rowcount

    def record_run(self, stage: str, elapsed_s: float, summary: str = "") -> None:
        self.init_db()
        self.conn.execute(
            "INSERT INTO stage_runs (stage, summary, elapsed_s, finished_at) VALUES (?, ?, ?, ?)",
            (stage, summary, float(elapsed_s), _now()),
        )
        self.conn.commit()

    def get_runs(self, stage: Optional[str] = None) -> List[Dict]:
        self.init_db()
        if stage is None:
            rows = self.conn.execute("SELECT * FROM stage_runs ORDER BY id").fetchall()
        else:
            rows = self.conn.execute("SELECT * FROM stage_runs WHERE stage = ? ORDER BY id", (stage,)).fetchall()
        return [dict(row) for row in rows]

    def content_digests(self) -> Dict[str, str]:
        """存储目录下全部产物文件的摘要 (不含清单本身)"""
        digests = {}
        for path in sorted(self.store_dir.rglob("*")):
            if path.is_file() and path.name != MANIFEST_NAME and not path.name.startswith(MANIFEST_NAME):
                digests[str(path.relative_to(self.store_dir))] = file_digest(path)
        return digests


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# 便捷函数
def get_store(store_dir: str = None) -> Store:
    """获取已初始化的存储实例"""
    store = Store(store_dir)
    store.init_db()
    return store
