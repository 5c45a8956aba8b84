"""
spectrum.py
-----------
本模組負責：
1. 週期核特徵值（Simpson 數值積分），並以 Bessel 閉式解交叉驗證；
2. 週期核的假設常數 (N_ε, M_ε, Q_ε) 與特徵值衰減條件檢查；
3. Gaussian 核在 N(0, σ²) 下的閉式特徵值、特徵函數與 Monte-Carlo 經驗特徵值；
4. inverse 核的截斷動差矩陣特徵值；
5. 座標 Nyström 相對於精確對角的誤差曲線與理論樣本數。
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import integrate, special
from tqdm import tqdm

from config import INVERSE_MAX_DEGREE, INVERSE_MAX_DIM, MIN_QUAD_POINTS
from config_loader import MAX_WORKERS
from kernels import GAUSSIAN, PERIODIC, BaseKernel, KernelSpec
from lipbound import COORD_NYSTROM, EXACT_DIAG, Model, WitnessSet, gtg_estimate
from process.dataset_process import Box

GOLDEN_RATIO_SQ = (3.0 + math.sqrt(5.0)) / 2.0


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    quad_points: int = 0

    @property
    def sorted_eigenvalues(self) -> np.ndarray:
        return np.sort(self.eigenvalues)[::-1]

    def rows(self) -> List[tuple]:
        return [(j, float(lam)) for j, lam in enumerate(self.eigenvalues)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "quad_points": self.quad_points,
                "eigenvalues": [float(v) for v in self.eigenvalues]}


@dataclass
class AssumptionConstants:
    n_eps: float
    N_eps: int
    M_eps: float
    Q_eps: float
    eps: float
    c4: float
    c6: float


# ========== Step 1. 週期核 ==========
def _check_periodic(base: BaseKernel):
    if not isinstance(base, BaseKernel) or base.kind != PERIODIC:
        raise ValueError("❌ 需要週期基底核")


def _check_quad(quad_points: int):
    if quad_points < MIN_QUAD_POINTS or quad_points % 2:
        raise ValueError(f"❌ quad_points 必須為 >= {MIN_QUAD_POINTS} 的偶數，目前為 {quad_points}")


def _fourier_cosine(kappa, period: float, J: int, quad_points: int) -> np.ndarray:
    """λ_j = (1/v) ∫_{−v/2}^{v/2} κ(t) cos(j ω₀ t) dt，ω₀ = 2π/v；composite Simpson"""
    t = np.linspace(-period / 2.0, period / 2.0, quad_points + 1)
    values = kappa(t)
    w0 = 2.0 * np.pi / period
    j = np.arange(J + 1)[:, None]
    return integrate.simpson(values[None, :] * np.cos(j * w0 * t[None, :]), x=t, axis=1) / period


def periodic_eigenvalues(base: BaseKernel, J: int, quad_points: int = MIN_QUAD_POINTS) -> SpectrumReport:
    _check_periodic(base)
    _check_quad(quad_points)
    lam = _fourier_cosine(lambda t: base.k0(t, 0.0), base.period, J, quad_points)
    return SpectrumReport(lam, PERIODIC, {"sigma": base.sigma, "period": base.period, "J": J}, quad_points)


def periodic_eigenvalues_bessel(base: BaseKernel, J: int) -> np.ndarray:
    """κ(t) = e^{−a} e^{a cos(ω₀t)}，a = 1/(4σ²)，故 λ_j = e^{−a} I_j(a)"""
    _check_periodic(base)
    return special.ive(np.arange(J + 1), 1.0 / (4.0 * base.sigma ** 2))


def periodic_sine_projection(base: BaseKernel, j: int, x: float, quad_points: int = MIN_QUAD_POINTS) -> float:
    """(1/v) ∫ k0(x, y) sin(j ω₀ y) dy / sin(j ω₀ x)"""
    _check_periodic(base)
    _check_quad(quad_points)
    w0 = 2.0 * np.pi / base.period
    denom = np.sin(j * w0 * x)
    if j < 1 or abs(denom) < 1e-8:
        raise ValueError("❌ 需要 j >= 1 且 sin(j ω₀ x) 不為 0")
    y = np.linspace(-base.period / 2.0, base.period / 2.0, quad_points + 1)
    integral = integrate.simpson(base.k0(x, y) * np.sin(j * w0 * y), x=y)
    return float(integral / base.period / denom)


def assumption_constants(base: BaseKernel, eps: float, c4: float, c6: float) -> AssumptionConstants:
    _check_periodic(base)
    if not 0 < eps <= 1:
        raise ValueError(f"❌ eps 必須在 (0, 1]，目前為 {eps}")
    if not c4 > 1:
        raise ValueError(f"❌ c4 必須 > 1，目前為 {c4}")
    if not c6 > 0:
        raise ValueError(f"❌ c6 必須 > 0，目前為 {c6}")
    v = base.period
    n_eps = math.log(2.1 * c6 / eps ** 2 * max(1.0, v ** 2 / (4.0 * math.pi ** 2))) / math.log(c4)
    N_eps = 1 + 2 * math.floor(n_eps)
    M_eps = math.sqrt(2.0) * math.pi / v * (N_eps - 1)
    return AssumptionConstants(n_eps, N_eps, M_eps, math.sqrt(2.0), eps, c4, c6)


def eigen_condition_check(report: SpectrumReport, c4: float, c6: float, j_max: int = 50) -> dict:
    """
    逐 j 檢查 λ_j (1+j)² max(1, j²) (1+[j≥1]) ≤ c6 · c4^{−j}，
    並回報讓條件對所有 j ≤ j_max 成立所需的最小 c6。
    """
    lam = report.eigenvalues[: j_max + 1]
    j = np.arange(lam.size)
    lhs = lam * (1 + j) ** 2 * np.maximum(1, j ** 2) * np.where(j >= 1, 2, 1)
    rhs = c6 * c4 ** (-j.astype(float))
    rows = [{"j": int(k), "value": float(a), "bound": float(b), "passed": bool(a <= b)}
            for k, a, b in zip(j, lhs, rhs)]
    return {"rows": rows, "all_passed": all(r["passed"] for r in rows),
            "required_c6": float(np.max(lhs * c4 ** j.astype(float)))}


def periodized_gaussian_eigenvalues(sigma: float, period: float, J: int,
                                    quad_points: int = MIN_QUAD_POINTS) -> SpectrumReport:
    """
    κ_v(t) = Σ_m exp(−(t − m v)²/(2σ²)) 的特徵值（週期化 Gaussian），
    與週期核共用同一個積分公式；閉式為 (√(2π) σ / v) exp(−σ² (j ω₀)² / 2)。
    """
    if not (sigma > 0 and period > 0):
        raise ValueError("❌ sigma 與週期必須 > 0")
    _check_quad(quad_points)
    reach = int(math.ceil(10.0 * sigma / period + 0.5)) + 1
    shifts = period * np.arange(-reach, reach + 1)

    def kappa(t):
        return np.sum(np.exp(-(t[None, :] - shifts[:, None]) ** 2 / (2.0 * sigma ** 2)), axis=0)

    lam = _fourier_cosine(kappa, period, J, quad_points)
    return SpectrumReport(lam, "periodized-gaussian", {"sigma": sigma, "period": period, "J": J}, quad_points)


# ========== Step 2. Gaussian 核 ==========
def gaussian_eigenvalues_closed_form(sigma: float, J: int) -> SpectrumReport:
    """λ_j = c₀^{−j−1/2}，c₀ = (3+√5)/2（量測 N(0,σ²) 與頻寬 σ 相同）"""
    if not sigma > 0:
        raise ValueError(f"❌ sigma 必須 > 0，目前為 {sigma}")
    if J < 1:
        raise ValueError(f"❌ J 必須 >= 1，目前為 {J}")
    lam = GOLDEN_RATIO_SQ ** (-np.arange(J, dtype=float) - 0.5)
    return SpectrumReport(lam, GAUSSIAN, {"sigma": sigma, "J": J})


def gaussian_eigenfunctions(sigma: float, J: int, x) -> np.ndarray:
    """e_j(x)，形狀 (len(x), J)；在 N(0, σ²) 下正交歸一"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = (1.25 ** 0.25) * x / sigma
    envelope = 5.0 ** 0.125 * np.exp(-(math.sqrt(5.0) - 1.0) * x ** 2 / (4.0 * sigma ** 2))
    out = np.empty((x.size, J))
    for j in range(J):
        coef = np.zeros(j + 1)
        coef[j] = 1.0
        norm = math.exp(-0.5 * (j * math.log(2.0) + special.gammaln(j + 1)))
        out[:, j] = envelope * np.polynomial.hermite.hermval(z, coef) * norm
    return out


def gaussian_empirical_eigenvalues(sigma: float, n: int, k: int, seed: int = 0) -> np.ndarray:
    """(1/n)·Gram 在 n 個 N(0, σ²) 樣本上的前 k 大特徵值"""
    x = np.random.default_rng(seed).normal(0.0, sigma, size=n)
    K = np.exp(-(x[:, None] - x[None, :]) ** 2 / (2.0 * sigma ** 2))
    return np.linalg.eigvalsh(K / n)[::-1][:k]


# ========== Step 3. inverse 核 ==========
def multi_indices(d: int, degree_cap: int) -> List[tuple]:
    """|α| ≤ degree_cap 的多重指標，依總次數分級後字典序排列"""
    out = []
    for total in range(degree_cap + 1):
        graded = [a for a in itertools.product(range(total + 1), repeat=d) if sum(a) == total]
        out.extend(sorted(graded, reverse=True))
    return out


def ball_moment(gamma: Sequence[int]) -> float:
    """單位球上均勻分布的 E[y^γ]；任一分量為奇數時為 0"""
    gamma = np.asarray(gamma)
    if np.any(gamma % 2):
        return 0.0
    d = gamma.size
    log_q = (np.sum(special.gammaln((gamma + 1) / 2.0)) - special.gammaln((gamma.sum() + d) / 2.0 + 1.0)
             - (d / 2.0 * math.log(math.pi) - special.gammaln(d / 2.0 + 1.0)))
    return float(np.exp(log_q))


def inverse_kernel_spectrum(d: int, degree_cap: int) -> SpectrumReport:
    """
    k(x, y) = 1/(2 − x·y) = Σ_α (w_α x^α)(w_α y^α)，w_α² = 2^{−|α|−1} |α|!/∏α_i!；
    M[α, β] = w_α w_β E[y^{α+β}]。
    """
    if not 1 <= d <= INVERSE_MAX_DIM:
        raise ValueError(f"❌ 維度必須介於 1 與 {INVERSE_MAX_DIM} 之間，目前為 {d}")
    if not 0 <= degree_cap <= INVERSE_MAX_DEGREE:
        raise ValueError(f"❌ degree_cap 必須介於 0 與 {INVERSE_MAX_DEGREE} 之間，目前為 {degree_cap}")

    alphas = multi_indices(d, degree_cap)
    A = np.array(alphas)
    total = A.sum(axis=1)
    log_w2 = -(total + 1) * math.log(2.0) + special.gammaln(total + 1) - special.gammaln(A + 1).sum(axis=1)
    w = np.exp(0.5 * log_w2)
    moments = {}
    M = np.empty((len(alphas), len(alphas)))
    for i, a in enumerate(alphas):
        for j in range(i, len(alphas)):
            key = tuple(np.add(a, alphas[j]))
            if key not in moments:
                moments[key] = ball_moment(key)
            M[i, j] = M[j, i] = w[i] * w[j] * moments[key]
    lam = np.sort(np.linalg.eigvalsh(M))[::-1]
    return SpectrumReport(lam, "inverse", {"d": d, "degree_cap": degree_cap, "n_features": len(alphas)})


# ========== Step 4. Nyström 誤差曲線 ==========
def theoretical_sample_size(constants: AssumptionConstants, eps: float, delta: float) -> float:
    N, Q = constants.N_eps, constants.Q_eps
    return max(float(N), 5.0 / (3.0 * eps ** 2) * N * Q ** 2 * math.log(2.0 * N / delta))


def _domain_for(base: BaseKernel, d: int) -> Box:
    if base.kind == PERIODIC:
        return Box.unit(d, -base.period / 2.0, base.period / 2.0)
    return Box.unit(d)


def nystrom_error_curve(base: BaseKernel, d: int, n_list: Sequence[int], trials: int = 20, seed: int = 0,
                        model_seed: int = 0, n_anchors: int = 20, threads: int = MAX_WORKERS) -> List[dict]:
    """
    固定一個隨機模型，對每個 n 與每次試驗抽 n 個 witness，
    計算 |λ_max(CoordNystrom) − λ_max(ExactDiag)| 的中位數。
    """
    if not isinstance(base, BaseKernel):
        raise ValueError("❌ 需要 Gaussian 或週期基底核")
    domain = _domain_for(base, d)
    rng = np.random.default_rng(model_seed)
    model = Model(KernelSpec.product(base, d), domain.sample(rng, n_anchors), rng.uniform(-1.0, 1.0, n_anchors))
    exact = gtg_estimate(model, None, EXACT_DIAG).value

    jobs = [(n, t) for n in n_list for t in range(trials)]

    def run(job):
        n, t = job
        witnesses = WitnessSet(domain.sample(np.random.default_rng([seed, n, t]), n))
        return abs(gtg_estimate(model, witnesses, COORD_NYSTROM).value - exact)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        errors = list(tqdm(executor.map(run, jobs), total=len(jobs), desc="Nyström 誤差曲線"))

    errors = np.array(errors).reshape(len(n_list), trials)
    medians = np.median(errors, axis=1)
    return [{"n": int(n), "median_error": float(m), "relative_error": float(m / exact) if exact > 0 else 0.0}
            for n, m in zip(n_list, medians)]


def count_inversions(values: Sequence[float], floor: float = 1e-9) -> int:
    """相鄰項增加超過 floor 的次數"""
    v = np.asarray(values, dtype=float)
    return int(np.sum(np.diff(v) > floor))
