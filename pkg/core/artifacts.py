"""
结果文件写出模块

CSV、SVG、文本报告写入临时目录，commit 时生成 manifest.tsv 并原子替换目标目录。
"""

import hashlib
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

MANIFEST_NAME = 'manifest.tsv'

LAYER_STYLES: Dict[str, Dict] = {
    'caustic': {'linestyle': '--', 'linewidth': 1.0, 'color': 'black'},
    'level': {'linestyle': '-', 'linewidth': 0.8, 'color': 'tab:blue'},
    'maxwell': {'linestyle': '-', 'linewidth': 2.4, 'color': 'tab:red'},
    'series': {'linestyle': '-', 'linewidth': 1.0, 'color': 'tab:green'},
}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


class ArtifactWriter:
    """
    结果目录写出器

    所有文件先写进目标目录旁的临时目录，commit() 写清单后整体替换；
    已存在的目标目录只有带 manifest.tsv（即本工具以前的输出）才会被替换。
    """

    def __init__(self, config: Optional[Dict] = None, target_dir: str = './output'):
        self.config = config or {}
        out_cfg = self.config.get('output', {})
        digits = int(out_cfg.get('float_digits', 17))
        self.float_format = f'%.{digits}g'
        self.target = Path(target_dir).resolve()
        self.logger = logging.getLogger(__name__)
        self.target.parent.mkdir(parents=True, exist_ok=True)
        if self.target.exists() and not (self.target / MANIFEST_NAME).exists():
            raise FileExistsError(f"输出目录已存在且不是本工具的结果目录: {self.target}")
        self.staging = Path(tempfile.mkdtemp(prefix=f'.{self.target.name}.', dir=str(self.target.parent)))
        self.files: List[str] = []
        self.manifest_entries: List[Tuple[str, str]] = []
        self.committed = False

    def __enter__(self) -> 'ArtifactWriter':
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.abort()
        elif not self.committed:
            self.commit()
        return False

    def _path(self, name: str) -> Path:
        rel = Path(name)
        if rel.is_absolute() or '..' in rel.parts:
            raise ValueError(f"结果文件必须使用相对路径: {name}")
        if name in self.files:
            raise ValueError(f"结果文件重复写出: {name}")
        path = self.staging / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel.as_posix())
        return path

    def write_csv(self, name: str, df: pd.DataFrame) -> Path:
        """按固定列顺序写CSV，浮点数17位有效数字"""
        path = self._path(name)
        df.to_csv(path, float_format=self.float_format, index=False, lineterminator='\n')
        self.logger.debug(f"写出 {name} ({len(df)} 行)")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as fh:
            fh.write(text if text.endswith('\n') else text + '\n')
        return path

    def read_csv(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.staging / name)

    def write_svg(self, name: str, layers: Sequence[Tuple[str, str]], x_col: str = 'x1', y_col: str = 'x2',
                  group_cols: Sequence[str] = ('label', 'branch'), title: str = '') -> Path:
        """
        由已写出的CSV绘图

        Args:
            layers: [(csv文件名, 样式)]，样式取 caustic / level / maxwell / series
            group_cols: 按这些列分组连线，避免跨分支连线
        """
        plt.rcParams['svg.hashsalt'] = 'burgers-analysis'
        plt.rcParams['svg.fonttype'] = 'none'
        fig, ax = plt.subplots(figsize=(6, 6))
        try:
            for csv_name, style in layers:
                if csv_name not in self.files:
                    raise ValueError(f"绘图只能使用已写出的CSV: {csv_name}")
                df = self.read_csv(csv_name)
                if df.empty or x_col not in df.columns or y_col not in df.columns:
                    continue
                keys = [c for c in group_cols if c in df.columns]
                groups = df.groupby(keys, sort=True) if keys else [(None, df)]
                kwargs = LAYER_STYLES.get(style, LAYER_STYLES['series'])
                for _, part in groups:
                    ax.plot(part[x_col].to_numpy(), part[y_col].to_numpy(), **kwargs)
            ax.set_xlabel(x_col)
            ax.set_ylabel(y_col)
            if title:
                ax.set_title(title)
            path = self._path(name)
            fig.savefig(path, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
        return path

    def manifest(self) -> List[Tuple[str, str]]:
        return [(rel, sha256_file(self.staging / rel)) for rel in sorted(self.files)]

    def commit(self) -> List[Tuple[str, str]]:
        """写 manifest.tsv 并把临时目录原子地移动到目标位置"""
        entries = self.manifest()
        with open(self.staging / MANIFEST_NAME, 'w', encoding='utf-8', newline='\n') as fh:
            for rel, digest in entries:
                fh.write(f"{rel}\t{digest}\n")
        old = None
        try:
            if self.target.exists():
                if not (self.target / MANIFEST_NAME).exists():
                    raise FileExistsError(f"输出目录已存在且不是本工具的结果目录: {self.target}")
                old = Path(tempfile.mkdtemp(prefix=f'.{self.target.name}.old.', dir=str(self.target.parent)))
                os.replace(self.target, old / self.target.name)
            os.replace(self.staging, self.target)
        except Exception as e:
            self.logger.error(f"结果目录提交失败: {e}")
            if old is not None and not self.target.exists():
                os.replace(old / self.target.name, self.target)
            raise
        finally:
            if old is not None:
                shutil.rmtree(old, ignore_errors=True)
        self.committed = True
        self.manifest_entries = entries
        self.logger.info(f"结果已写入 {self.target}，共 {len(entries)} 个文件")
        return entries

    def abort(self):
        shutil.rmtree(self.staging, ignore_errors=True)
        self.logger.warning(f"已放弃未提交的结果: {self.staging}")


def read_manifest(directory: str) -> List[Tuple[str, str]]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        return []
    rows = []
    with open(path, encoding='utf-8') as fh:
        for line in fh:
            line = line.rstrip('\n')
            if line:
                rel, digest = line.split('\t')
                rows.append((rel, digest))
    return rows


__all__ = ['ArtifactWriter', 'read_manifest', 'sha256_file', 'MANIFEST_NAME', 'LAYER_STYLES']
