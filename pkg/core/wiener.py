"""
Wiener路径模块

离散布朗路径及其累计积分 ∫W 与 ∫|W|²（梯形公式）。
随机数使用计数器型 Philox 生成器，key = (seed, substream)，同一种子跨平台复现同一路径。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import NumericError

logger = logging.getLogger(__name__)


def philox_generator(seed: int, substream: int = 0) -> np.random.Generator:
    """Philox4x64 生成器，key 由种子与子流编号组成"""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(substream) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """
    离散Wiener路径

    W 形状 (N+1, m)，intW 为 ∫₀ᵗW(s)ds，intW2 为 ∫₀ᵗ|W(s)|²ds，均在 times 网格上。
    """
    dt: float
    times: np.ndarray
    W: np.ndarray
    intW: np.ndarray
    intW2: np.ndarray
    seed: int
    substream: int = 0

    @property
    def dim(self) -> int:
        return int(self.W.shape[1])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def from_samples(cls, times: np.ndarray, W: np.ndarray, seed: int = -1, substream: int = 0) -> 'WienerPath':
        times = np.asarray(times, dtype=float)
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if not np.allclose(W[0], 0.0):
            raise NumericError("Wiener路径必须从零出发")
        intW = cumulative_trapezoid(W, times, axis=0, initial=0.0)
        intW2 = cumulative_trapezoid(np.sum(W * W, axis=1), times, initial=0.0)
        dt = float(times[1] - times[0]) if times.size > 1 else 0.0
        return cls(dt=dt, times=times, W=W, intW=intW, intW2=intW2, seed=seed, substream=substream)

    @classmethod
    def simulate(cls, dim: int, horizon: float, dt: Optional[float] = None, seed: int = 0,
                 substream: int = 0, dt_fraction: float = 1e-4) -> 'WienerPath':
        """
        生成路径

        Args:
            dim: 噪声分量个数
            horizon: 时间范围
            dt: 步长，缺省为 dt_fraction·horizon
            seed: 种子
            substream: 子流编号（蒙特卡洛分批使用）
        """
        if horizon <= 0:
            raise ValueError(f"路径时间范围必须为正: {horizon}")
        dt = float(dt) if dt else dt_fraction * horizon
        n = int(round(horizon / dt))
        times = np.arange(n + 1) * dt
        rng = philox_generator(seed, substream)
        dW = rng.standard_normal((n, dim)) * np.sqrt(dt)
        W = np.vstack([np.zeros((1, dim)), np.cumsum(dW, axis=0)])
        logger.debug(f"生成Wiener路径: 维数={dim}, 步数={n}, seed={seed}/{substream}")
        return cls.from_samples(times, W, seed=seed, substream=substream)

    def _locate(self, t: float) -> int:
        if t < -1e-12 or t > self.horizon * (1 + 1e-12) + 1e-12:
            raise NumericError(f"时间 {t} 超出路径范围 [0, {self.horizon}]")
        k = int(np.searchsorted(self.times, t, side='right') - 1)
        return min(max(k, 0), len(self.times) - 1)

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
        """
        t 时刻的 (W, ∫W, ∫|W|²)，网格间对 W 线性插值，积分续加部分梯形
        """
        k = self._locate(t)
        tk = self.times[k]
        if k == len(self.times) - 1 or abs(t - tk) < 1e-15:
            return self.W[k].copy(), self.intW[k].copy(), float(self.intW2[k])
        alpha = (t - tk) / (self.times[k + 1] - tk)
        Wt = (1 - alpha) * self.W[k] + alpha * self.W[k + 1]
        h = t - tk
        intW = self.intW[k] + 0.5 * h * (self.W[k] + Wt)
        intW2 = self.intW2[k] + 0.5 * h * (self.W[k] @ self.W[k] + Wt @ Wt)
        return Wt, intW, float(intW2)

    def increments(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """[0, t] 上的步长与增量，末段为部分步"""
        k = self._locate(t)
        steps = np.diff(self.times[:k + 1])
        dW = np.diff(self.W[:k + 1], axis=0)
        if t - self.times[k] > 1e-15:
            Wt, _, _ = self.at(t)
            steps = np.append(steps, t - self.times[k])
            dW = np.vstack([dW, (Wt - self.W[k])[None, :]])
        return steps, dW

    def project(self, G: np.ndarray) -> 'WienerPath':
        """有效噪声 w = G·W（G 形状 d×m），积分按投影后的样本重算"""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return WienerPath.from_samples(self.times, self.W @ G.T, seed=self.seed, substream=self.substream)


def path_batch(dim: int, horizon: float, dt: float, seeds, substream: int = 0):
    """按种子列表生成路径（每条路径独立）"""
    return [WienerPath.simulate(dim, horizon, dt=dt, seed=int(s), substream=substream) for s in seeds]
