"""
dataset_process.py
------------------
本模組負責：
1. 定義資料集 Dataset 與定義域 Box；
2. 讀取 CSV（第 0 欄為整數標籤，其餘為特徵），自動略過標題列；
3. 每個特徵做 min-max 正規化到 [0,1] 並保存常數；
4. 產生可重現的合成資料（Blobs / TwoMoons）。
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn import datasets


@dataclass(frozen=True)
class Box:
    """軸對齊的盒狀定義域 [low, high]^d"""
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape:
            raise ValueError(f"❌ Box 上下界維度不一致: {low.shape} vs {high.shape}")
        if np.any(high < low):
            raise ValueError("❌ Box 上界必須 >= 下界")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def unit(cls, dim: int, low: float = 0.0, high: float = 1.0) -> "Box":
        return cls(np.full(dim, low), np.full(dim, high))

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.low, self.high)

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.low - atol) and np.all(x <= self.high + atol))

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        size = (self.dim,) if n is None else (n, self.dim)
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_min: Optional[np.ndarray] = None
    feature_max: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=int).ravel()
        if features.shape[0] != labels.shape[0]:
            raise ValueError(f"❌ 特徵列數 {features.shape[0]} 與標籤數 {labels.shape[0]} 不一致")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def is_binary(self) -> bool:
        return set(self.classes.tolist()) <= {-1, 1}

    @property
    def feature_box(self) -> Box:
        return Box.unit(self.dim)

    def normalised(self) -> "Dataset":
        """每個特徵 min-max 正規化到 [0,1]，常數特徵對映到 0"""
        lo = self.features.min(axis=0)
        hi = self.features.max(axis=0)
        return replace(self, features=apply_normalisation(self.features, lo, hi),
                       feature_min=lo, feature_max=hi)

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


def apply_normalisation(features: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (np.asarray(features, dtype=float) - lo) / span
    scaled[:, hi <= lo] = 0.0
    return np.clip(scaled, 0.0, 1.0)


# ========== CSV 讀取 ==========
def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, normalise: bool = True) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"❌ 資料檔不存在: {path}")

    labels, rows, arity = [], [], None
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            cells = [c.strip() for c in row]
            if line_no == 1 and not _is_number(cells[0]):
                continue   # 標題列
            if arity is None:
                arity = len(cells)
                if arity < 2:
                    raise ValueError(f"❌ 第 {line_no} 行欄位數不足（至少需要標籤與一個特徵）")
            if len(cells) != arity:
                raise ValueError(f"❌ 第 {line_no} 行欄位數 {len(cells)} 與前面的 {arity} 不一致")
            try:
                label = float(cells[0])
                values = [float(c) for c in cells[1:]]
            except ValueError:
                hint = "；標題列只能放在第 1 行" if not rows and not _is_number(cells[0]) else ""
                raise ValueError(f"❌ 第 {line_no} 行含有非數值欄位: {row}{hint}") from None
            if label != int(label):
                raise ValueError(f"❌ 第 {line_no} 行標籤不是整數: {cells[0]}")
            labels.append(int(label))
            rows.append(values)

    if not rows:
        raise ValueError(f"❌ 資料檔為空: {path}")

    dataset = Dataset(np.array(rows, dtype=float), np.array(labels, dtype=int))
    return dataset.normalised() if normalise else dataset


# ========== 合成資料 ==========
def gen_synthetic(kind: str = "blobs", n: int = 50, classes: int = 2, dim: int = 2,
                  seed: int = 0, cluster_std: float = 0.08) -> Dataset:
    """
    產生桌機規模的合成資料，固定 seed 時逐位元可重現。
    二分類時標籤為 {-1, +1}，多分類時為 0..classes-1。
    """
    if n < 1:
        raise ValueError(f"❌ 每類樣本數必須 >= 1，目前為 {n}")
    if classes < 2:
        raise ValueError(f"❌ 類別數必須 >= 2，目前為 {classes}")

    kind = kind.lower().replace("_", "").replace("-", "")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        centers = rng.uniform(0.2, 0.8, size=(classes, dim))
        X, y = datasets.make_blobs(n_samples=[n] * classes, n_features=dim, centers=centers,
                                   cluster_std=cluster_std, random_state=seed)
    elif kind == "twomoons":
        if classes != 2:
            raise ValueError("❌ TwoMoons 只支援 2 類")
        if dim < 2:
            raise ValueError("❌ TwoMoons 至少需要 2 維")
        X, y = datasets.make_moons(n_samples=(n, n), noise=0.1, random_state=seed)
        X = (X - X.min(axis=0)) / (X.max(axis=0) - X.min(axis=0))
        if dim > 2:
            extra = 0.5 + 0.05 * rng.standard_normal((X.shape[0], dim - 2))
            X = np.hstack([X, extra])
    else:
        raise ValueError(f"❌ 不支援的合成資料類型: {kind}")

    X = np.clip(X, 0.0, 1.0)
    if classes == 2:
        y = np.where(y == 0, -1, 1)
    return Dataset(X, y, feature_min=np.zeros(dim), feature_max=np.ones(dim))
