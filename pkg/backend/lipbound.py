"""
lipbound.py
-----------
本模組負責：
1. 核展開模型 f(x) = (1/l) Σ_a γ_a k(x^a, x) 及其梯度、Hessian、批次 Jacobian；
2. 梯度 Gram 算子 GᵀG：非對角精確、對角可用閉式 (ExactDiag) 或座標 Nyström；
3. 整體 Nyström 近似 G̃ = (K⁺)^{1/2} J；
4. λ_max（power iteration）、RKHS 範數上界、經驗 Lipschitz 搜尋；
5. 多分類 ℓ2 / ℓ∞ 上界（交替最大化）。
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy import optimize

from config import (ALTERNATION_MAX_ROUNDS, ALTERNATION_RESTARTS, ALTERNATION_TOL,
                    ASCENT_MAX_ITER, PERIODIC_SLOPE_GRID, PINV_RTOL, POWER_MAX_ITER,
                    POWER_TOL, WITNESS_RESTARTS)
from kernels import GAUSSIAN, KernelSpec, _leave_one_out_products
from process.dataset_process import Box

EXACT_DIAG = "ExactDiag"
COORD_NYSTROM = "CoordNystrom"
HOLISTIC_NYSTROM = "HolisticNystrom"
RKHS_NORM = "RkhsNorm"
EMPIRICAL_SEARCH = "EmpiricalSearch"
BRUTE_FORCE = "BruteForce"

L2 = "L2"
L1 = "L1"
LINF = "Linf"

RANDOM = "Random"
GREEDY = "Greedy"


class ConvergenceError(RuntimeError):
    """迭代達上限仍未收斂；best 為目前最佳估計"""

    def __init__(self, message: str, best: float):
        super().__init__(message)
        self.best = best


# ========== Step 1. 半正定矩陣工具 ==========
def _psd_eigh(K: np.ndarray, rtol: float = PINV_RTOL):
    K = 0.5 * (K + K.T)
    vals, vecs = np.linalg.eigh(K)
    top = vals[-1] if vals.size else 0.0
    keep = vals > rtol * top if top > 0 else np.zeros_like(vals, dtype=bool)
    return vals[keep], vecs[:, keep]


def psd_pinv(K: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """特徵值門檻化的偽逆：丟棄 < rtol * λ_max(K) 的特徵值"""
    vals, vecs = _psd_eigh(K, rtol)
    return (vecs / vals) @ vecs.T


def psd_pinv_sqrt(K: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """(K⁺)^{1/2}，對稱"""
    vals, vecs = _psd_eigh(K, rtol)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _power(M: np.ndarray, x: np.ndarray, tol: float, max_iter: int):
    """回傳 (特徵值, 迭代次數)；未收斂時拋出 ConvergenceError"""
    lam = 0.0
    for it in range(max_iter):
        y = M @ x
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, it
        if np.linalg.norm(y - lam * x) <= tol * max(abs(lam), 1e-300):
            return lam, it
        x = y / ny
    raise ConvergenceError(f"power iteration 在 {max_iter} 次內未收斂", best=lam)


def lambda_max(M, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER, seed: int = 0) -> float:
    """
    對稱半正定矩陣的最大特徵值（power iteration）。
    起始向量固定為正規化全 1 向量；若全 1 向量本身就是特徵向量（第一步即停滯）
    或與主特徵向量正交，另以 seed 隨機向量再跑一次並取較大者。
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"❌ lambda_max 需要方陣，收到形狀 {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-8):
        raise ValueError("❌ lambda_max 需要對稱矩陣")
    n = M.shape[0]
    scale = float(np.abs(M).max()) if M.size else 0.0
    if scale == 0.0:
        return 0.0

    ones = np.ones(n) / np.sqrt(n)
    lam, iterations = _power(M, ones, tol, max_iter)
    if iterations > 0 and np.linalg.norm(M @ ones) > 1e-12 * scale:
        return lam

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    return max(lam, _power(M, x, tol, max_iter)[0])


def top_eigenvalue(M: np.ndarray) -> float:
    """內部使用：power iteration 未收斂時退回 eigh"""
    try:
        return lambda_max(M)
    except ConvergenceError as e:
        warnings.warn(f"{e}；改用完整特徵分解（best={e.best:.6g}）")
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


# ========== Step 2. 資料型別 ==========
@dataclass(frozen=True)
class Model:
    kernel: KernelSpec
    anchors: np.ndarray
    coeffs: np.ndarray
    scale: bool = True

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if anchors.shape[1] != self.kernel.dim:
            raise ValueError(f"❌ anchor 維度 {anchors.shape[1]} 與核維度 {self.kernel.dim} 不一致")
        if coeffs.shape[0] != anchors.shape[0]:
            raise ValueError(f"❌ 係數長度 {coeffs.shape[0]} 與 anchor 數 {anchors.shape[0]} 不一致")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def weights(self) -> np.ndarray:
        """有效係數 β：f(x) = Σ_a β_a k(x^a, x)"""
        return self.coeffs / self.n_anchors if self.scale else self.coeffs

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def with_coeffs(self, coeffs) -> "Model":
        return replace(self, coeffs=np.asarray(coeffs, dtype=float))

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xp = self.kernel.project_inputs(X, warn=False)
        return self.weights @ self.kernel.gram(self.anchors, Xp)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp = self.kernel.project_inputs(x, warn=False)
        g = self.weights @ self.kernel.grad_y_rows(self.anchors, xp)
        norm = np.linalg.norm(x)
        if not self.kernel.is_product and norm > 1.0:
            # 單位球投影 x/‖x‖ 的 Jacobian
            u = x / norm
            g = (g - u * (u @ g)) / norm
        return g

    def hessian(self, x) -> np.ndarray:
        """∇²f(x)（inverse 核只在單位球內有效）"""
        x = np.asarray(x, dtype=float)
        return np.tensordot(self.weights, self.kernel.hessian_y_rows(self.anchors, x), axes=1)

    def jacobian(self, W) -> np.ndarray:
        """J[s, j] = ∂_j f(w^s)"""
        return gradient_tensor(self.kernel, self.anchors, W) @ self.weights

    def rkhs_norm(self) -> float:
        beta = self.weights
        return float(np.sqrt(max(beta @ self.kernel.gram(self.anchors, self.anchors) @ beta, 0.0)))


@dataclass(frozen=True)
class WitnessSet:
    points: np.ndarray
    origin: str = RANDOM

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))

    @property
    def n(self) -> int:
        return 0 if self.points.size == 0 else self.points.shape[0]

    def extend(self, new_points, origin: Optional[str] = None) -> "WitnessSet":
        new_points = np.atleast_2d(np.asarray(new_points, dtype=float))
        pts = new_points if self.n == 0 else np.vstack([self.points, new_points])
        return WitnessSet(pts, origin or self.origin)

    def check_within(self, box: Box, atol: float = 1e-12):
        if not all(box.contains(p, atol) for p in self.points):
            raise ValueError("❌ witness 點超出定義域")


@dataclass
class LipschitzEstimate:
    value: float
    method: str
    n_witness: int = 0
    squared: bool = False
    argmax: Optional[np.ndarray] = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"❌ Lipschitz 估計必須 >= 0，收到 {self.value}")

    @property
    def lipschitz(self) -> float:
        return float(np.sqrt(self.value)) if self.squared else float(self.value)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "n_witness": self.n_witness,
            "squared": self.squared,
            "lipschitz": self.lipschitz,
            "argmax": None if self.argmax is None else self.argmax.tolist(),
            "details": self.details,
        }


def _require_witnesses(witnesses: WitnessSet):
    if witnesses is None or witnesses.n == 0:
        raise ValueError("❌ witness 集合為空")


# ========== Step 3. 梯度張量與 GᵀG ==========
def gradient_tensor(kernel: KernelSpec, anchors: np.ndarray, W) -> np.ndarray:
    """T[s, j, a] = ∂_{y_j} k(x^a, w^s)，形狀 (n, d, l)"""
    W = kernel.project_inputs(np.atleast_2d(np.asarray(W, dtype=float)), warn=False)
    if kernel.is_product:
        K0, D = kernel.coordinate_factors(anchors, W)        # (d, l, n)
        T = D * _leave_one_out_products(K0)
        return np.transpose(T, (2, 0, 1))
    denom = 2.0 - W @ anchors.T                               # (n, l)
    return anchors.T[None, :, :] / (denom ** 2)[:, None, :]


def coordinate_quadratic_forms(model: Model, witnesses: Optional[WitnessSet], mode: str) -> np.ndarray:
    """
    Q[i, j] 為 l×l 對稱矩陣，使 (GᵀG)[i, j] = βᵀ Q[i, j] β。
    非對角由再生性質精確計算；對角 η 依 mode 取閉式 ∂^{1,1}k0 或座標 Nyström。
    """
    kernel = model.kernel
    if not kernel.is_product:
        raise ValueError("❌ 座標分解只適用於乘積核")
    if mode not in (EXACT_DIAG, COORD_NYSTROM):
        raise ValueError(f"❌ 不支援的模式: {mode}")
    if mode == COORD_NYSTROM:
        _require_witnesses(witnesses)

    base = kernel.base
    X = model.anchors
    d, l = kernel.dim, model.n_anchors
    K0, D = kernel.coordinate_factors(X, X)                   # (d, l, l)

    Q = np.empty((d, d, l, l))
    for j in range(d):
        a = X[:, j]
        if mode == EXACT_DIAG:
            eta = base.d11(a[:, None], a[None, :])
        else:
            w = witnesses.points[:, j]
            U = base.d01(a[:, None], w[None, :])
            eta = U @ psd_pinv(base.k0(w[:, None], w[None, :])) @ U.T
        others = np.prod(np.delete(K0, j, axis=0), axis=0)
        Q[j, j] = 0.5 * (eta + eta.T) * others
        for i in range(j):
            rest = np.prod(np.delete(K0, [i, j], axis=0), axis=0)
            M = D[i] * D[j].T * rest
            Q[i, j] = Q[j, i] = 0.5 * (M + M.T)
    return Q


def build_gtg_product(model: Model, witnesses: Optional[WitnessSet], mode: str = EXACT_DIAG) -> np.ndarray:
    Q = coordinate_quadratic_forms(model, witnesses, mode)
    beta = model.weights
    P = np.einsum("a,ijab,b->ij", beta, Q, beta)
    return 0.5 * (P + P.T)


def build_gtilde_holistic(model: Model, witnesses: WitnessSet) -> np.ndarray:
    """G̃ = (K⁺)^{1/2} J，K 為 witness 的完整核 Gram"""
    _require_witnesses(witnesses)
    W = model.kernel.project_inputs(witnesses.points, warn=False)
    J = model.jacobian(W)
    return psd_pinv_sqrt(model.kernel.gram(W, W)) @ J


def gtg_estimate(model: Model, witnesses: Optional[WitnessSet], method: str) -> LipschitzEstimate:
    """λ_max(GᵀG) 的三種版本，回傳平方尺度的估計"""
    if method == HOLISTIC_NYSTROM:
        G = build_gtilde_holistic(model, witnesses)
        value = top_eigenvalue(G.T @ G)
    else:
        value = top_eigenvalue(build_gtg_product(model, witnesses, method))
    n = 0 if witnesses is None or method == EXACT_DIAG else witnesses.n
    return LipschitzEstimate(max(value, 0.0), method, n_witness=n, squared=True)


# ========== Step 4. RKHS 範數上界 ==========
def growth_slope(kernel: KernelSpec) -> float:
    """sup_z g(z)/z"""
    if not kernel.is_product:
        return 1.0
    base = kernel.base
    if base.kind == GAUSSIAN:
        return max(1.0 / base.sigma, 1.0)
    z = np.linspace(0.0, base.period / 2.0, PERIODIC_SLOPE_GRID + 1)[1:]
    dist = np.sqrt(np.maximum(2.0 - 2.0 * base.k0(z, 0.0), 0.0))
    return float(np.max(dist / z))


def rkhs_norm_bound(model: Model) -> LipschitzEstimate:
    norm = model.rkhs_norm()
    slope = growth_slope(model.kernel)
    return LipschitzEstimate(norm * slope, RKHS_NORM,
                             details={"rkhs_norm": norm, "slope": slope})


# ========== Step 5. 經驗 Lipschitz（梯度範數局部最大化） ==========
def _grad_norm_objective(model: Model, dual_norm: str):
    def fun(x):
        g = model.gradient(x)
        H = model.hessian(x)
        if dual_norm == L2:
            return -float(g @ g), -2.0 * (H @ g)
        s = np.where(g >= 0.0, 1.0, -1.0)
        return -float(np.abs(g).sum()), -(H @ s)
    return fun


def _ascend(model: Model, x0: np.ndarray, domain: Box, dual_norm: str):
    fun = _grad_norm_objective(model, dual_norm)
    bounds = list(zip(domain.low, domain.high))
    if model.kernel.is_product:
        res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": ASCENT_MAX_ITER, "ftol": 1e-15, "gtol": 1e-12})
        x = domain.clip(res.x)
    else:
        # inverse 核只在單位球內定義
        x0 = model.kernel.project_inputs(x0, warn=False)
        ball = {"type": "ineq", "fun": lambda x: 1.0 - x @ x, "jac": lambda x: -2.0 * x}
        res = optimize.minimize(fun, x0, jac=True, method="SLSQP", bounds=bounds,
                                constraints=[ball], options={"maxiter": ASCENT_MAX_ITER, "ftol": 1e-15})
        x = model.kernel.project_inputs(domain.clip(res.x), warn=False)
    return x, -fun(x)[0]


def empirical_lipschitz(model: Model, domain: Box, restarts: int = WITNESS_RESTARTS, seed: int = 0,
                        dual_norm: str = L2) -> LipschitzEstimate:
    """
    多起點局部最大化 ‖∇f(x)‖（L2 或 L1 對偶範數），投影到定義域 box。
    回傳值與 argmax（作為 greedy witness 重用）；相同 seed 結果相同。
    """
    if restarts < 1:
        raise ValueError(f"❌ restarts 必須 >= 1，目前為 {restarts}")
    if dual_norm not in (L2, L1):
        raise ValueError(f"❌ 不支援的對偶範數: {dual_norm}")
    rng = np.random.default_rng(seed)
    starts = domain.sample(rng, restarts)
    if model.is_zero:
        return LipschitzEstimate(0.0, EMPIRICAL_SEARCH, argmax=starts[0],
                                 details={"restarts": restarts, "dual_norm": dual_norm})

    best_x, best_val = starts[0], -np.inf
    for x0 in starts:
        x, val = _ascend(model, x0, domain, dual_norm)
        if val > best_val:
            best_x, best_val = x, val
    value = np.sqrt(max(best_val, 0.0)) if dual_norm == L2 else max(best_val, 0.0)
    return LipschitzEstimate(float(value), EMPIRICAL_SEARCH, argmax=best_x,
                             details={"restarts": restarts, "dual_norm": dual_norm, "seed": seed})


# ========== Step 6. 多分類上界（交替最大化） ==========
def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def l2_alternation(G_list: Sequence[np.ndarray], restarts: int = ALTERNATION_RESTARTS, seed: int = 0,
                   max_rounds: int = ALTERNATION_MAX_ROUNDS, tol: float = ALTERNATION_TOL):
    """
    sup_{‖v‖=‖u‖=1} Σ_c (vᵀ G̃_c u)²。
    固定 u 時 v 為 [G̃_c u]_c 的主左奇異向量；固定 v 時 u 為 [G̃_cᵀ v]_c 的主左奇異向量。
    回傳 (value, u, v)。
    """
    n, d = G_list[0].shape
    rng = np.random.default_rng(seed)
    best = (0.0, np.ones(d) / np.sqrt(d), np.ones(n) / np.sqrt(n))
    if all(not np.any(G) for G in G_list):
        return best

    for r in range(restarts):
        u = np.ones(d) / np.sqrt(d) if r == 0 else _unit(rng.standard_normal(d))
        obj, v = -np.inf, best[2]
        for _ in range(max_rounds):
            A = np.stack([G @ u for G in G_list], axis=1)
            v = np.linalg.svd(A, full_matrices=False)[0][:, 0]
            B = np.stack([G.T @ v for G in G_list], axis=1)
            u = np.linalg.svd(B, full_matrices=False)[0][:, 0]
            new = float(sum((v @ G @ u) ** 2 for G in G_list))
            converged = new - obj < tol
            obj = max(obj, new)
            if converged:
                break
        if obj > best[0]:
            best = (obj, u, v)
    return best


def linf_alternation(G: np.ndarray, restarts: int = ALTERNATION_RESTARTS, seed: int = 0,
                     max_rounds: int = ALTERNATION_MAX_ROUNDS):
    """sup_{‖v‖₂≤1, ‖u‖∞≤1} uᵀ G̃ᵀ v；回傳 (value, u, v)"""
    n, d = G.shape
    rng = np.random.default_rng(seed)
    best = (0.0, np.ones(d), np.zeros(n))
    if not np.any(G):
        return best
    for r in range(restarts):
        u = np.ones(d) if r == 0 else rng.choice([-1.0, 1.0], size=d)
        for _ in range(max_rounds):
            Gu = G @ u
            obj = float(np.linalg.norm(Gu))
            if obj == 0.0:
                break
            v = Gu / obj
            u_new = np.where(G.T @ v >= 0.0, 1.0, -1.0)
            if obj > best[0]:
                best = (obj, u.copy(), v)
            if np.array_equal(u_new, u):
                break
            u = u_new
    return best


def _check_class_models(models: Sequence[Model]):
    if not models:
        raise ValueError("❌ 多分類模型清單為空")
    k0 = models[0].kernel
    if any(m.kernel != k0 or m.dim != models[0].dim for m in models):
        raise ValueError("❌ 所有類別模型必須共用同一個核與維度")


def multiclass_l2_bound(models: Sequence[Model], witnesses: WitnessSet, restarts: int = ALTERNATION_RESTARTS,
                        seed: int = 0) -> LipschitzEstimate:
    _check_class_models(models)
    _require_witnesses(witnesses)
    G_list = [build_gtilde_holistic(m, witnesses) for m in models]
    value, u, v = l2_alternation(G_list, restarts, seed)
    return LipschitzEstimate(max(value, 0.0), HOLISTIC_NYSTROM, n_witness=witnesses.n, squared=True,
                             details={"norm": L2, "classes": len(models)})


def multiclass_linf_bound(models: Sequence[Model], witnesses: WitnessSet, restarts: int = ALTERNATION_RESTARTS,
                          seed: int = 0) -> LipschitzEstimate:
    _check_class_models(models)
    _require_witnesses(witnesses)
    per_class = [linf_alternation(build_gtilde_holistic(m, witnesses), restarts, seed)[0] for m in models]
    return LipschitzEstimate(float(max(per_class)), HOLISTIC_NYSTROM, n_witness=witnesses.n,
                             details={"norm": LINF, "per_class": per_class})


# ========== Step 7. 隨機抽樣的反例 ==========
def _uniform_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)


def sampled_gradient_check(v, n_samples: int, seed: int = 0) -> float:
    """f(x) = ½(vᵀx)²：單位球內隨機抽樣得到的 max_s ‖∇f(w^s)‖ = max_s |vᵀw^s|·‖v‖"""
    v = np.asarray(v, dtype=float)
    W = _uniform_ball(np.random.default_rng(seed), n_samples, v.size)
    return float(np.max(np.abs(W @ v)) * np.linalg.norm(v))


def pseudo_inverse_norm(v, n_samples: int, seed: int = 0) -> float:
    """‖(WᵀW)^{-1/2} Wᵀ v‖₂：n >= d 個樣本即可精確恢復 ‖v‖₂"""
    v = np.asarray(v, dtype=float)
    W = _uniform_ball(np.random.default_rng(seed), n_samples, v.size).T     # (d, n)
    return float(np.linalg.norm(psd_pinv_sqrt(W.T @ W) @ (W.T @ v)))
