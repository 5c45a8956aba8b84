"""
kernels.py
----------
本模組負責：
1. 定義基底核（Gaussian / MacKay 週期核）與其一階、混合二階解析導數；
2. 定義 KernelSpec：座標乘積核或 inverse 核 k(x,y) = (2 - x·y)^{-1}；
3. 逐列分塊組裝 Gram 矩陣；
4. 提供 median 頻寬啟發式。

所有函式都是輸入的純函式；有限差分只作為測試 oracle。
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from config import GRAM_BLOCK_ROWS

GAUSSIAN = "gaussian"
PERIODIC = "periodic"
PRODUCT = "product"
INVERSE = "inverse"


# ========== Step 1. 基底核 ==========
@dataclass(frozen=True)
class BaseKernel:
    """一維基底核 k0(s, t)，對所有參數向量化（numpy broadcasting）"""
    kind: str
    sigma: float
    period: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, PERIODIC):
            raise ValueError(f"❌ 不支援的基底核: {self.kind}")
        if not self.sigma > 0:
            raise ValueError(f"❌ sigma 必須 > 0，目前為 {self.sigma}")
        if self.kind == PERIODIC and not (self.period is not None and self.period > 0):
            raise ValueError(f"❌ 週期核的週期 v 必須 > 0，目前為 {self.period}")

    @classmethod
    def gaussian(cls, sigma: float) -> "BaseKernel":
        return cls(GAUSSIAN, float(sigma))

    @classmethod
    def periodic(cls, period: float, sigma: float) -> "BaseKernel":
        return cls(PERIODIC, float(sigma), float(period))

    @property
    def omega(self) -> float:
        # 週期核內部角頻率 pi / v
        return np.pi / self.period

    def k0(self, s, t):
        z = np.subtract(s, t)
        if self.kind == GAUSSIAN:
            return np.exp(-(z * z) / (2.0 * self.sigma ** 2))
        sz = np.sin(self.omega * z)
        return np.exp(-(sz * sz) / (2.0 * self.sigma ** 2))

    def d01(self, s, t):
        """∂k0/∂t"""
        z = np.subtract(s, t)
        s2 = self.sigma ** 2
        if self.kind == GAUSSIAN:
            return (z / s2) * self.k0(s, t)
        a = self.omega
        return (a * np.sin(2.0 * a * z) / (2.0 * s2)) * self.k0(s, t)

    def d11(self, s, t):
        """∂²k0/∂s∂t，即兩個導數特徵在 H0 中的內積"""
        z = np.subtract(s, t)
        s2 = self.sigma ** 2
        if self.kind == GAUSSIAN:
            return (1.0 / s2 - (z * z) / (s2 * s2)) * self.k0(s, t)
        a = self.omega
        h1 = a * np.sin(2.0 * a * z) / (2.0 * s2)
        h2 = a * a * np.cos(2.0 * a * z) / s2
        return (h2 - h1 * h1) * self.k0(s, t)

    def d02(self, s, t):
        # 平移不變核：∂²k0/∂t² = -∂²k0/∂s∂t
        return -self.d11(s, t)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "period": self.period}


# ========== Step 2. 核規格 ==========
def _leave_one_out_products(F: np.ndarray) -> np.ndarray:
    """沿第 0 軸計算「除自己之外」的乘積，不使用除法（避免 underflow 後除以 0）"""
    d = F.shape[0]
    ones = np.ones_like(F[:1])
    prefix = np.concatenate([ones, np.cumprod(F[:-1], axis=0)], axis=0) if d > 1 else ones
    suffix = np.concatenate([np.cumprod(F[:0:-1], axis=0)[::-1], ones], axis=0) if d > 1 else ones
    return prefix * suffix


@dataclass(frozen=True)
class KernelSpec:
    structure: str
    dim: int
    base: Optional[BaseKernel] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"❌ 維度必須 >= 1，目前為 {self.dim}")
        if self.structure == PRODUCT and self.base is None:
            raise ValueError("❌ 乘積核需要指定基底核")
        if self.structure == INVERSE and self.base is not None:
            raise ValueError("❌ inverse 核不是乘積核，不接受基底核")
        if self.structure not in (PRODUCT, INVERSE):
            raise ValueError(f"❌ 不支援的核結構: {self.structure}")

    @classmethod
    def product(cls, base: BaseKernel, dim: int) -> "KernelSpec":
        return cls(PRODUCT, int(dim), base)

    @classmethod
    def inverse(cls, dim: int) -> "KernelSpec":
        return cls(INVERSE, int(dim))

    @property
    def is_product(self) -> bool:
        return self.structure == PRODUCT

    def describe(self) -> str:
        if self.is_product:
            extra = f", v={self.base.period}" if self.base.kind == PERIODIC else ""
            return f"product[{self.base.kind}, sigma={self.base.sigma}{extra}]^{self.dim}"
        return f"inverse(d={self.dim})"

    def to_dict(self) -> dict:
        return {"structure": self.structure, "dim": self.dim,
                "base": self.base.to_dict() if self.base else None}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        if data["structure"] == INVERSE:
            return cls.inverse(data["dim"])
        b = data["base"]
        base = BaseKernel(b["kind"], float(b["sigma"]), None if b.get("period") is None else float(b["period"]))
        return cls.product(base, data["dim"])

    # ---- 輸入檢查 ----
    def check_points(self, X, name: str = "x") -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"❌ {name} 的維度 {X.shape[-1]} 與核維度 {self.dim} 不一致")
        if self.structure == INVERSE:
            norms = np.linalg.norm(X, axis=-1)
            if np.any(norms > 1.0 + 1e-12):
                raise ValueError(f"❌ inverse 核要求 ‖{name}‖₂ <= 1，最大為 {norms.max():.6g}；請先呼叫 project_inputs")
        return X

    def project_inputs(self, X, warn: bool = True) -> np.ndarray:
        """inverse 核的輸入投影到閉單位球（1/max(1,‖x‖₂) 縮放），其餘核原樣返回"""
        X = np.asarray(X, dtype=float)
        if self.structure != INVERSE:
            return X
        norms = np.linalg.norm(X, axis=-1, keepdims=True)
        scale = 1.0 / np.maximum(1.0, norms)
        if warn and np.any(norms > 1.0):
            warnings.warn(f"inverse 核：{int(np.sum(norms > 1.0))} 個輸入超出單位球，已投影")
        return X * scale

    # ---- 逐點運算 ----
    def coordinate_factors(self, A, B):
        """乘積核每個座標的 (k0, ∂^{0,1}k0) 矩陣，形狀 (d, |A|, |B|)"""
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        S = A.T[:, :, None]
        T = B.T[:, None, :]
        return self.base.k0(S, T), self.base.d01(S, T)

    def evaluate(self, x, y) -> float:
        x = self.check_points(x, "x")
        y = self.check_points(y, "y")
        if self.is_product:
            return float(np.prod(self.base.k0(x, y)))
        return float(1.0 / (2.0 - np.dot(x, y)))

    def grad_y(self, x, y) -> np.ndarray:
        x = self.check_points(x, "x")
        y = self.check_points(y, "y")
        return self.grad_y_rows(x[None, :], y)[0]

    def grad_y_rows(self, A: np.ndarray, y: np.ndarray) -> np.ndarray:
        """對每個 A 的列 a 計算 ∇_y k(a, y)，形狀 (|A|, d)"""
        if self.is_product:
            K0 = self.base.k0(A, y).T         # (d, l)
            D = self.base.d01(A, y).T
            return (D * _leave_one_out_products(K0)).T
        denom = 2.0 - A @ y
        return A / (denom ** 2)[:, None]

    def hessian_y_rows(self, A: np.ndarray, y: np.ndarray) -> np.ndarray:
        """對每個 A 的列計算 ∇²_y k(a, y)，形狀 (|A|, d, d)"""
        l, d = A.shape
        if not self.is_product:
            denom = 2.0 - A @ y
            return 2.0 * A[:, :, None] * A[:, None, :] / (denom ** 3)[:, None, None]
        K0 = self.base.k0(A, y)                # (l, d)
        D1 = self.base.d01(A, y)
        D2 = self.base.d02(A, y)
        H = np.empty((l, d, d))
        for i in range(d):
            for j in range(i, d):
                others = np.prod(np.delete(K0, [i, j], axis=1), axis=1)
                H[:, i, j] = (D2[:, i] if i == j else D1[:, i] * D1[:, j]) * others
                H[:, j, i] = H[:, i, j]
        return H

    def gram(self, A, B) -> np.ndarray:
        A = self.check_points(np.atleast_2d(A), "A")
        B = self.check_points(np.atleast_2d(B), "B")
        same = A is B or (A.shape == B.shape and np.array_equal(A, B))
        K = np.empty((A.shape[0], B.shape[0]))
        for start in range(0, A.shape[0], GRAM_BLOCK_ROWS):
            block = A[start:start + GRAM_BLOCK_ROWS]
            if self.is_product:
                K[start:start + block.shape[0]] = np.prod(
                    self.base.k0(block[:, None, :], B[None, :, :]), axis=2)
            else:
                K[start:start + block.shape[0]] = 1.0 / (2.0 - block @ B.T)
        if same:
            K = 0.5 * (K + K.T)
        return K


# ========== Step 3. 模組層級運算 ==========
def eval_kernel(spec: KernelSpec, x, y) -> float:
    return spec.evaluate(x, y)


def grad_y_kernel(spec: KernelSpec, x, y) -> np.ndarray:
    return spec.grad_y(x, y)


def mixed_second_base(base: BaseKernel, s: float, t: float) -> float:
    if not isinstance(base, BaseKernel):
        raise ValueError(f"❌ 不支援的基底核: {base!r}")
    return float(base.d11(s, t))


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    return spec.gram(A, B)


def median_bandwidth(X) -> float:
    """成對距離的（下）中位數"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("❌ median 頻寬至少需要 2 個點")
    dists = np.sort(pdist(X))
    return float(dists[(dists.size - 1) // 2])
