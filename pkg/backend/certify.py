"""
certify.py
----------
本模組負責：
1. 一維離散問題上的 robust risk oracle（對偶：λ 掃描 + 有界純量最小化；原始：運輸 LP）；
2. 凸包絡（monotone chain 下凸包）與網格上的 c-Lipschitz 常數；
3. 正則化風險與 robust risk 的差距 Δ 及其上界；
4. 隨機問題產生器與整套 oracle 一致性檢查；
5. 核模型的「對抗風險 vs 正則化風險」散佈圖資料。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats
from tqdm import tqdm

from attacks import CW_MARGIN, AttackConfig, BinaryScorer, pgd_attack
from config import DUAL_SCAN_POINTS, GOLDEN_TOL, PRIMAL_MAX_GRID, PRIMAL_MAX_SUPPORT
from config_loader import MAX_WORKERS
from kernels import BaseKernel, KernelSpec, median_bandwidth
from lipbound import L1, L2, ConvergenceError, Model, empirical_lipschitz
from process.dataset_process import Box, Dataset

CONVEX = "convex"
NONCONVEX = "nonconvex"


# ========== Step 1. 離散問題 ==========
@dataclass(frozen=True)
class DiscreteProblem:
    grid: np.ndarray
    f_values: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    r: float
    cost_scale: float = 1.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        f = np.asarray(self.f_values, dtype=float).ravel()
        support = np.atleast_1d(np.asarray(self.support, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if grid.size != f.size:
            raise ValueError(f"❌ grid 與 f_values 長度不一致: {grid.size} vs {f.size}")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("❌ grid 必須嚴格遞增")
        if support.shape != weights.shape:
            raise ValueError("❌ μ 的支撐點與權重數量不一致")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"❌ μ 的權重必須非負且總和為 1，目前總和 {weights.sum():.15g}")
        if self.r < 0:
            raise ValueError(f"❌ 半徑 r 必須 >= 0，目前為 {self.r}")
        if not self.cost_scale > 0:
            raise ValueError(f"❌ cost_scale 必須 > 0，目前為 {self.cost_scale}")
        idx = np.searchsorted(grid, support)
        idx = np.clip(idx, 0, grid.size - 1)
        if np.any(np.abs(grid[idx] - support) > 1e-12):
            raise ValueError("❌ μ 的支撐點必須落在 grid 上")
        for name, value in (("grid", grid), ("f_values", f), ("support", support), ("weights", weights)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_support_idx", idx)

    @property
    def support_idx(self) -> np.ndarray:
        return self._support_idx

    @property
    def expected_f(self) -> float:
        return float(self.weights @ self.f_values[self.support_idx])

    def cost_matrix(self) -> np.ndarray:
        """C[i, j] = cost_scale·|x_i − y_j|，x_i 為 μ 的支撐點"""
        return self.cost_scale * np.abs(self.support[:, None] - self.grid[None, :])


@dataclass
class GapReport:
    robust_risk: float
    regularised_risk: float
    delta: float
    delta_bound: float
    lip: float
    lip_envelope: Optional[float]
    envelope_gap_integral: Optional[float]
    rho: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


# ========== Step 2. Lipschitz 與凸包絡 ==========
def lipschitz_on_grid(problem: DiscreteProblem) -> float:
    return _grid_lipschitz(problem.grid, problem.f_values, problem.cost_scale)


def _grid_lipschitz(grid, f, cost_scale: float = 1.0) -> float:
    if grid.size < 2:
        raise ValueError("❌ 至少需要 2 個 grid 點")
    return float(np.max(np.abs(np.diff(f)) / (cost_scale * np.diff(grid))))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_envelope_1d(grid, f_values) -> np.ndarray:
    """點集 {(x_i, f_i)} 的下凸包，在每個 grid 點上線性內插"""
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(f_values, dtype=float)
    hull: List[tuple] = []
    for point in zip(grid, f):
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], point) <= 0:
            hull.pop()
        hull.append(point)
    hx, hy = zip(*hull)
    return np.minimum(np.interp(grid, hx, hy), f)


def tail_slopes(problem: DiscreteProblem) -> Tuple[float, float]:
    """grid 兩端線段的斜率；f 在 grid 之外依此仿射延伸到整條實數線"""
    g, f = problem.grid, problem.f_values
    if g.size < 2:
        raise ValueError("❌ 至少需要 2 個 grid 點")
    return (f[1] - f[0]) / (g[1] - g[0]), (f[-1] - f[-2]) / (g[-1] - g[-2])


def _tail_rate(problem: DiscreteProblem) -> float:
    """沿著上升的尾巴把質量送到無窮遠時，每單位成本的增益"""
    s_left, s_right = tail_slopes(problem)
    return max(s_right, -s_left, 0.0) / problem.cost_scale


def extended_envelope(problem: DiscreteProblem) -> Optional[np.ndarray]:
    """
    仿射延伸後的 f 在整條實數線上的凸包絡，於 grid 上取值。
    左尾斜率大於右尾斜率時包絡為 −∞，回傳 None。
    """
    s_left, s_right = tail_slopes(problem)
    if s_left > s_right:
        return None
    g, f = problem.grid, problem.f_values
    hull = convex_envelope_1d(g, f)
    slopes = np.concatenate([[s_left, s_right], np.clip(np.diff(hull) / np.diff(g), s_left, s_right)])
    intercepts = np.min(f[None, :] - slopes[:, None] * g[None, :], axis=1)
    return np.minimum(np.max(slopes[:, None] * g[None, :] + intercepts[:, None], axis=0), f)


# ========== Step 3. Robust risk oracle ==========
def _dual_objective(problem: DiscreteProblem):
    C = problem.cost_matrix()
    f = problem.f_values

    def h(lam: float) -> float:
        return lam * problem.r + float(problem.weights @ np.max(f[None, :] - lam * C, axis=1))
    return h


def robust_risk_dual(problem: DiscreteProblem) -> float:
    """
    inf_{λ ≥ t} λr + Σ_i μ_i max_y (f(y) − λ c(x_i, y))，t 為上升尾巴的斜率；
    λ < t 時延伸後的 sup 為 +∞。
    """
    if problem.r == 0.0:
        return problem.expected_f
    h = _dual_objective(problem)
    lip = lipschitz_on_grid(problem)
    if lip == 0.0:
        return h(0.0)

    scan = np.linspace(_tail_rate(problem), 2.0 * lip, DUAL_SCAN_POINTS)
    values = np.array([h(lam) for lam in scan])
    k = int(np.argmin(values))
    lo, hi = scan[max(k - 1, 0)], scan[min(k + 1, scan.size - 1)]
    res = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": GOLDEN_TOL})
    return float(min(values[k], res.fun, h(lo), h(hi)))


def robust_risk_primal(problem: DiscreteProblem, max_support: int = PRIMAL_MAX_SUPPORT) -> float:
    """
    max Σ π_ij f(y_j) + 尾巴增益，π ≥ 0、列和為 μ_i、總運輸成本 ≤ r。
    兩個額外變數 q_L、q_R 表示沿左右尾巴送出的「質量 × 距離」（極限下質量趨近 0）。
    以 HiGHS dual simplex 求解 LP 的頂點最優解。
    """
    s, g = problem.support.size, problem.grid.size
    if s > max_support:
        raise ValueError(f"❌ μ 支撐點數 {s} 超過上限 {max_support}")
    if g > PRIMAL_MAX_GRID:
        raise ValueError(f"❌ grid 點數 {g} 超過上限 {PRIMAL_MAX_GRID}")

    s_left, s_right = tail_slopes(problem)
    C = problem.cost_matrix()
    A_eq = np.hstack([np.kron(np.eye(s), np.ones((1, g))), np.zeros((s, 2))])
    cost = np.concatenate([C.ravel(), [problem.cost_scale, problem.cost_scale]])
    res = optimize.linprog(
        c=-np.concatenate([np.tile(problem.f_values, s), [-s_left, s_right]]),
        A_ub=cost[None, :], b_ub=[problem.r],
        A_eq=A_eq, b_eq=problem.weights,
        bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise ConvergenceError(f"運輸 LP 求解失敗: {res.message}", best=float("nan"))
    return float(-res.fun)


def gap_delta(problem: DiscreteProblem) -> GapReport:
    """包絡為 −∞ 時 ∫(f − conv f)dμ 無窮大，上界退化為 r·lip，包絡相關欄位為 None"""
    lip = lipschitz_on_grid(problem)
    robust = robust_risk_dual(problem)
    regularised = problem.expected_f + problem.r * lip
    envelope = extended_envelope(problem)
    if envelope is None:
        lip_env = integral = rho = None
        bound = problem.r * lip
    else:
        s_left, s_right = tail_slopes(problem)
        lip_env = max(abs(s_left), abs(s_right)) / problem.cost_scale
        gap = problem.f_values - envelope
        integral = float(problem.weights @ gap[problem.support_idx])
        rho = float(np.max(gap))
        bound = problem.r * lip - max(problem.r * lip_env - integral, 0.0)
    return GapReport(robust_risk=robust, regularised_risk=regularised, delta=regularised - robust,
                     delta_bound=bound, lip=lip, lip_envelope=lip_env,
                     envelope_gap_integral=integral, rho=rho)


# ========== Step 4. 隨機問題與 oracle 套件 ==========
def random_problem(kind: str, rng: np.random.Generator, n_grid: int = 41, n_support: int = 4,
                   dirac_at_max: bool = False) -> DiscreteProblem:
    """[-1, 1] 上的隨機離散問題；kind 為 convex（隨機凸二次加仿射）或 nonconvex"""
    grid = np.linspace(-1.0, 1.0, n_grid)
    if kind == CONVEX:
        a, b, c = rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
        f = a * (grid - b) ** 2 + c * grid
    elif kind == NONCONVEX:
        freq = rng.uniform(1.0, 4.0, size=3)
        amp = rng.uniform(-1.0, 1.0, size=3)
        phase = rng.uniform(0.0, 2 * np.pi, size=3)
        f = np.sum(amp[:, None] * np.sin(freq[:, None] * np.pi * grid[None, :] + phase[:, None]), axis=0)
    else:
        raise ValueError(f"❌ 不支援的問題類型: {kind}")

    if dirac_at_max:
        # 兩端尾巴向下，grid 上的最大值即延伸後的最大值
        f[0], f[-1] = f[1] - 0.1, f[-2] - 0.1
        support, weights = grid[[int(np.argmax(f))]], np.array([1.0])
    else:
        idx = np.sort(rng.choice(n_grid, size=min(n_support, n_grid), replace=False))
        weights = rng.dirichlet(np.ones(idx.size))
        weights[-1] = 1.0 - weights[:-1].sum()
        support = grid[idx]
    return DiscreteProblem(grid, f, support, weights, r=float(rng.uniform(0.0, 1.0)),
                           cost_scale=float(rng.uniform(0.5, 2.0)))


def _check_envelope(problem: DiscreteProblem) -> bool:
    env = convex_envelope_1d(problem.grid, problem.f_values)
    slopes = np.diff(env) / np.diff(problem.grid)
    again = convex_envelope_1d(problem.grid, env)
    return bool(np.all(env <= problem.f_values + 1e-12)
                and np.all(np.diff(slopes) >= -1e-12 * max(1.0, np.abs(slopes).max()))
                and np.allclose(again, env, rtol=0.0, atol=1e-12))


def _run_case(index: int, seed: int, n_grid: int, max_support: int, kinds: Sequence[str]) -> dict:
    rng = np.random.default_rng([seed, index])
    kind = kinds[index % len(kinds)]
    problem = random_problem(kind, rng, n_grid, int(rng.integers(1, max_support + 1)))
    report = gap_delta(problem)
    primal = robust_risk_primal(problem, max_support)
    dirac = random_problem(kind, rng, n_grid, dirac_at_max=True)
    tight = gap_delta(dirac)
    laws = {
        "equivalence": abs(report.robust_risk - primal) <= 1e-6,
        "upper_bound": report.robust_risk <= report.regularised_risk + 1e-9,
        "gap": -1e-9 <= report.delta <= report.delta_bound + 1e-9,
        "tightness": abs(tight.delta - dirac.r * tight.lip) <= 1e-6,
        "envelope": _check_envelope(problem),
        "convex_zero_gap": kind != CONVEX or report.delta <= 1e-6,
    }
    return {"index": index, "kind": kind, "laws": laws, "dual": report.robust_risk, "primal": primal}


def run_oracle_suite(cfg) -> dict:
    """
    cfg 欄位：n_cases、seed、n_grid、max_support、kinds（預設 convex 與 nonconvex 交替）、threads。
    回傳每條定律的通過數，以及前幾個失敗案例。
    """
    n_cases = int(cfg.get("n_cases", 500))
    seed = int(cfg.get("seed", 0))
    n_grid = int(cfg.get("n_grid", 41))
    max_support = int(cfg.get("max_support", PRIMAL_MAX_SUPPORT))
    threads = int(cfg.get("threads", MAX_WORKERS))
    kinds = list(cfg.get("kinds") or [CONVEX, NONCONVEX])
    if any(k not in (CONVEX, NONCONVEX) for k in kinds):
        raise ValueError(f"❌ 不支援的問題類型: {kinds}")
    if n_grid > PRIMAL_MAX_GRID or n_grid < 2:
        raise ValueError(f"❌ n_grid 必須介於 2 與 {PRIMAL_MAX_GRID} 之間")

    with ThreadPoolExecutor(max_workers=threads) as executor:
        cases = list(tqdm(executor.map(lambda i: _run_case(i, seed, n_grid, max_support, kinds), range(n_cases)),
                          total=n_cases, desc="oracle 驗證中"))

    laws = cases[0]["laws"].keys() if cases else []
    summary = {law: {"passed": int(sum(c["laws"][law] for c in cases)), "total": len(cases)} for law in laws}
    failures = [c for c in cases if not all(c["laws"].values())][:10]
    return {"laws": summary, "failures": failures, "all_passed": not failures}


# ========== Step 5. 對抗風險 vs 正則化風險 ==========
def random_kernel_models(box: Box, n_models: int, n_anchors: int = 100, seed: int = 0) -> List[Model]:
    """γ ~ U[−2, 2]、anchor 在 box 內均勻抽樣、Gaussian 核頻寬取 median 啟發式"""
    models = []
    for m in range(n_models):
        rng = np.random.default_rng([seed, m])
        anchors = box.sample(rng, n_anchors)
        base = BaseKernel.gaussian(median_bandwidth(anchors))
        models.append(Model(KernelSpec.product(base, box.dim), anchors, rng.uniform(-2.0, 2.0, n_anchors)))
    return models


def _hinge(model: Model, X, y) -> np.ndarray:
    return np.maximum(0.0, 1.0 - y * model.decision(X))


def adversarial_vs_regularised(models: Sequence[Model], data: Dataset, delta: float, norm: str = L2,
                               seed: int = 0, box: Optional[Box] = None,
                               threads: int = MAX_WORKERS) -> List[dict]:
    """
    每個模型一列：
      adversarial_risk = PGD 在半徑 delta 球內找到的平均 hinge 損失；
      regularised_risk = 平均 hinge 損失 + delta·L̂（L̂ 取對應的對偶範數）。
    """
    if not data.is_binary:
        raise ValueError("❌ 散佈圖只支援 ±1 標籤的二分類資料")
    box = box if box is not None else data.feature_box
    cfg = AttackConfig(norm=norm, delta=float(delta), objective=CW_MARGIN, input_box=box, seed=seed)
    dual = L2 if norm == L2 else L1

    def run(item):
        model_id, model = item
        scorer = BinaryScorer(model)
        adv = np.array([pgd_attack(scorer, x, y, cfg, index=i).adversarial
                        for i, (x, y) in enumerate(zip(data.features, data.labels))])
        clean = float(np.mean(_hinge(model, data.features, data.labels)))
        attacked = float(np.mean(_hinge(model, adv, data.labels)))
        lip = 0.0 if delta == 0 else empirical_lipschitz(model, box, seed=[seed, model_id], dual_norm=dual).value
        return {"model_id": model_id, "adversarial_risk": attacked, "regularised_risk": clean + delta * lip}

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(tqdm(executor.map(run, enumerate(models)), total=len(models), desc="散佈圖計算中"))


def scatter_summary(rows: Sequence[dict], atol: float = 1e-6) -> dict:
    x = np.array([r["adversarial_risk"] for r in rows])
    y = np.array([r["regularised_risk"] for r in rows])
    below = float(np.mean(x <= y + atol)) if rows else 0.0
    corr = float(stats.pearsonr(x, y)[0]) if len(rows) > 2 and np.std(x) > 0 and np.std(y) > 0 else float("nan")
    return {"n_models": len(rows), "fraction_below_diagonal": below, "pearson": corr}
