"""
trainer.py
----------
本模組負責：
1. Landmark 特徵（Nyström 壓縮）：φ̃(x) = (K⁺)^{1/2} k(landmarks, x)；
2. Lipschitz 限制下的經驗風險最小化：
   - 限制型式 BruteForce / HolisticNystrom / CoordNystrom（二分類）；
   - 多分類 Crammer–Singer 損失搭配 ℓ2 或 ℓ∞ 限制；
   - 內層以 exact penalty 次梯度下降求解（單調回溯線搜尋），違反限制時放大 penalty；
3. 外層迴圈：估計經驗 Lipschitz，未達標則加入 witness（Random / Greedy）。
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import (ARMIJO_C, ARMIJO_SHRINK, FEASIBILITY_RTOL, INITIAL_WITNESSES, INNER_MAX_ITER,
                    INNER_STEP_INIT, INNER_STEP_MIN, MAX_LANDMARKS, STOP_SLACK, WITNESS_RESTARTS)
from config_loader import VERBOSE
from kernels import KernelSpec
from lipbound import (BRUTE_FORCE, COORD_NYSTROM, GREEDY, HOLISTIC_NYSTROM, L1, L2, LINF, RANDOM,
                      Model, WitnessSet, coordinate_quadratic_forms, empirical_lipschitz,
                      gradient_tensor, l2_alternation, linf_alternation, psd_pinv_sqrt)
from process.dataset_process import Box, Dataset

HINGE = "Hinge"
CRAMMER_SINGER = "CrammerSinger"

SOLVER_NOTE = "exact-penalty subgradient descent, Armijo backtracking, penalty escalation, feasibility rescaling"


# ========== Step 1. 設定與報告 ==========
@dataclass
class TrainConfig:
    L: float = 1.0
    reg_weight: float = 1e-3
    loss: str = HINGE
    constraint_mode: str = HOLISTIC_NYSTROM
    witness_mode: str = GREEDY
    outer_iters: int = 20
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e6
    inner_max_iter: int = INNER_MAX_ITER
    step_init: float = INNER_STEP_INIT
    step_min: float = INNER_STEP_MIN
    n_landmarks: int = MAX_LANDMARKS
    domain: Optional[Box] = None
    seed: int = 0
    lip_norm: str = L2

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"❌ Lipschitz 預算 L 必須 > 0，目前為 {self.L}")
        if self.reg_weight < 0:
            raise ValueError(f"❌ reg_weight 必須 >= 0，目前為 {self.reg_weight}")
        if not self.penalty_growth > 1:
            raise ValueError(f"❌ penalty_growth 必須 > 1，目前為 {self.penalty_growth}")
        if not 0 < self.penalty_init <= self.penalty_max:
            raise ValueError("❌ 需要 0 < penalty_init <= penalty_max")
        if self.outer_iters < 1:
            raise ValueError(f"❌ outer_iters 必須 >= 1，目前為 {self.outer_iters}")
        if self.n_landmarks < 1:
            raise ValueError(f"❌ n_landmarks 必須 >= 1，目前為 {self.n_landmarks}")
        if self.loss not in (HINGE, CRAMMER_SINGER):
            raise ValueError(f"❌ 不支援的損失: {self.loss}")
        if self.constraint_mode not in (BRUTE_FORCE, HOLISTIC_NYSTROM, COORD_NYSTROM):
            raise ValueError(f"❌ 不支援的限制型式: {self.constraint_mode}")
        if self.witness_mode not in (RANDOM, GREEDY):
            raise ValueError(f"❌ 不支援的 witness 模式: {self.witness_mode}")
        if self.lip_norm not in (L2, LINF):
            raise ValueError(f"❌ 不支援的 Lipschitz 範數: {self.lip_norm}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["domain"] = None if self.domain is None else {
            "low": self.domain.low.tolist(), "high": self.domain.high.tolist()}
        return data


@dataclass
class TrainReport:
    iterations: List[dict] = field(default_factory=list)
    converged: bool = False
    penalty_capped: bool = False
    solver: str = SOLVER_NOTE
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.iterations[-1] if self.iterations else {}

    def to_dict(self) -> dict:
        return {"converged": self.converged, "penalty_capped": self.penalty_capped,
                "solver": self.solver, "config": self.config, "iterations": self.iterations}


# ========== Step 2. 損失 ==========
def loss_value(kind: str, scores, label) -> float:
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("❌ scores 含有非有限值")
    if kind == HINGE:
        if label not in (-1, 1):
            raise ValueError(f"❌ Hinge 損失的標籤必須是 ±1，收到 {label}")
        return max(0.0, 1.0 - label * float(scores))
    if kind == CRAMMER_SINGER:
        scores = scores.ravel()
        if not (isinstance(label, (int, np.integer)) and 0 <= label < scores.size):
            raise ValueError(f"❌ 未知的類別 {label}（共 {scores.size} 類）")
        others = np.delete(scores, label)
        return max(0.0, float(np.max(1.0 + others - scores[label])))
    raise ValueError(f"❌ 不支援的損失: {kind}")


def _hinge(theta, Phi, y):
    margins = y * (Phi @ theta)
    active = margins < 1.0
    value = float(np.mean(np.maximum(0.0, 1.0 - margins)))
    grad = -(y[active] @ Phi[active]) / y.size
    return value, grad


def _crammer_singer(Theta, Phi, y):
    n = y.size
    S = Phi @ Theta.T                              # (n, C)
    M = 1.0 + S - S[np.arange(n), y][:, None]
    M[np.arange(n), y] = -np.inf
    worst = np.argmax(M, axis=1)
    margin = M[np.arange(n), worst]
    active = margin > 0.0
    value = float(np.sum(margin[active])) / n
    grad = np.zeros_like(Theta)
    np.add.at(grad, worst[active], Phi[active] / n)
    np.add.at(grad, y[active], -Phi[active] / n)
    return value, grad


# ========== Step 3. Landmark 特徵 ==========
class LandmarkMap:
    """φ̃(x) = (K⁺)^{1/2} k(Z, x)，使 φ̃(x)·φ̃(y) 重現 Nyström 核近似"""

    def __init__(self, kernel: KernelSpec, landmarks):
        landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
        if landmarks.size == 0:
            raise ValueError("❌ landmark 集合為空")
        self.kernel = kernel
        self.landmarks = kernel.project_inputs(landmarks, warn=False)
        self.root = psd_pinv_sqrt(kernel.gram(self.landmarks, self.landmarks))

    @property
    def size(self) -> int:
        return self.landmarks.shape[0]

    def transform(self, X) -> np.ndarray:
        X = self.kernel.project_inputs(np.atleast_2d(np.asarray(X, dtype=float)), warn=False)
        return (self.root @ self.kernel.gram(self.landmarks, X)).T

    def to_model(self, theta) -> Model:
        return Model(self.kernel, self.landmarks, self.root @ np.asarray(theta, dtype=float), scale=False)


def landmark_features(spec: KernelSpec, landmarks, x) -> np.ndarray:
    return LandmarkMap(spec, landmarks).transform(np.asarray(x, dtype=float)[None, :])[0]


def select_landmarks(X: np.ndarray, n_landmarks: int, rng: np.random.Generator) -> np.ndarray:
    if X.shape[0] <= n_landmarks:
        return X.copy()
    return X[np.sort(rng.choice(X.shape[0], size=n_landmarks, replace=False))]


# ========== Step 4. Witness ==========
def greedy_witness(model: Model, domain: Box, seed=0) -> np.ndarray:
    """梯度範數的最佳局部極大點（10 個 seeded 起點）"""
    return empirical_lipschitz(model, domain, WITNESS_RESTARTS, seed).argmax


def _initial_witnesses(kernel: KernelSpec, domain: Box, rng: np.random.Generator) -> WitnessSet:
    points = kernel.project_inputs(domain.sample(rng, INITIAL_WITNESSES), warn=False)
    return WitnessSet(points, RANDOM)


# ========== Step 5. 限制（回傳 sqrt 尺度的值與 Danskin 次梯度） ==========
class _BinaryConstraint:
    """√c(β) 與其對 β 的次梯度；c 為所選型式的二次限制值"""

    def __init__(self, mode: str, fmap: LandmarkMap, witnesses: WitnessSet):
        self.mode = mode
        kernel, Z = fmap.kernel, fmap.landmarks
        if mode == COORD_NYSTROM:
            self.Q = coordinate_quadratic_forms(Model(kernel, Z, np.zeros(len(Z)), scale=False),
                                                witnesses, COORD_NYSTROM)
            return
        T = gradient_tensor(kernel, Z, witnesses.points)                    # (n, d, m)
        if mode == HOLISTIC_NYSTROM:
            R = psd_pinv_sqrt(kernel.gram(witnesses.points, witnesses.points))
            T = np.einsum("st,tjm->sjm", R, T)
        self.T = T

    def __call__(self, beta: np.ndarray) -> Tuple[float, np.ndarray]:
        if self.mode == BRUTE_FORCE:
            G = self.T @ beta                                               # (n, d)
            s = int(np.argmax(np.sum(G * G, axis=1)))
            val = float(np.linalg.norm(G[s]))
            return val, (self.T[s].T @ G[s] / val if val > 0 else np.zeros_like(beta))

        if self.mode == HOLISTIC_NYSTROM:
            G = self.T @ beta
            lam, vecs = np.linalg.eigh(G.T @ G)
            u = vecs[:, -1]
            val = float(np.sqrt(max(lam[-1], 0.0)))
            Bu = np.tensordot(self.T, u, axes=([1], [0]))                   # (n, m)
            return val, (Bu.T @ (G @ u) / val if val > 0 else np.zeros_like(beta))

        P = np.einsum("a,ijab,b->ij", beta, self.Q, beta)
        lam, vecs = np.linalg.eigh(0.5 * (P + P.T))
        u = vecs[:, -1]
        val = float(np.sqrt(max(lam[-1], 0.0)))
        grad = np.einsum("i,j,ijab,b->a", u, u, self.Q, beta) / val if val > 0 else np.zeros_like(beta)
        return val, grad


class _MulticlassConstraint:
    def __init__(self, lip_norm: str, fmap: LandmarkMap, witnesses: WitnessSet, seed):
        self.lip_norm = lip_norm
        self.seed = seed
        kernel, Z = fmap.kernel, fmap.landmarks
        R = psd_pinv_sqrt(kernel.gram(witnesses.points, witnesses.points))
        self.B = np.einsum("st,tjm->sjm", R, gradient_tensor(kernel, Z, witnesses.points))

    def __call__(self, Beta: np.ndarray) -> Tuple[float, np.ndarray]:
        G_list = [self.B @ b for b in Beta]
        grad = np.zeros_like(Beta)
        if self.lip_norm == L2:
            value, u, v = l2_alternation(G_list, seed=self.seed)
            val = float(np.sqrt(max(value, 0.0)))
            if val > 0:
                Bv = np.tensordot(self.B, u, axes=([1], [0])).T @ v          # (m,)
                for c, G in enumerate(G_list):
                    grad[c] = (v @ G @ u) * Bv / val
            return val, grad

        vals = []
        for c, G in enumerate(G_list):
            value, u, v = linf_alternation(G, seed=self.seed)
            vals.append(value)
            if value > 0:
                grad[c] = np.tensordot(self.B, u, axes=([1], [0])).T @ v
        self.per_class = np.array(vals)
        return float(max(vals)), grad

    def penalty(self, Beta: np.ndarray, L: float) -> Tuple[float, np.ndarray]:
        """ℓ∞：逐類別 Σ_c max(0, val_c − L)；ℓ2：max(0, val − L)"""
        val, grad = self(Beta)
        if self.lip_norm == L2:
            return (val - L, grad) if val > L else (0.0, np.zeros_like(Beta))
        excess = self.per_class - L
        mask = excess > 0
        return float(np.sum(excess[mask])), grad * mask[:, None]


# ========== Step 6. 內層求解 ==========
def _penalty_descent(theta: np.ndarray, evaluate: Callable, cfg: TrainConfig):
    """次梯度下降 + Armijo 回溯；目標值單調不增"""
    F, g = evaluate(theta)
    step = cfg.step_init
    for _ in range(cfg.inner_max_iter):
        gg = float(np.sum(g * g))
        if gg == 0.0:
            break
        while step >= cfg.step_min:
            candidate = theta - step * g
            Fc, gc = evaluate(candidate)
            if Fc <= F - ARMIJO_C * step * gg:
                break
            step *= ARMIJO_SHRINK
        else:
            break
        theta, F, g = candidate, Fc, gc
        step = min(2.0 * step, cfg.step_init)
    return theta, F


def _solve_penalised(theta, loss_fn, constraint_fn, root, cfg: TrainConfig):
    """
    逐步放大 penalty μ 直到 √c ≤ L(1+rtol) 或 μ 超過上限；最後做可行性縮放。
    回傳 (theta, objective, constraint, penalty, capped)。
    """
    def evaluate_with(mu):
        def evaluate(th):
            lv, lg = loss_fn(th)
            beta = th @ root.T if th.ndim == 2 else root @ th
            pv, pg = constraint_fn(beta)
            pg = pg @ root if th.ndim == 2 else root.T @ pg
            F = lv + 0.5 * cfg.reg_weight * float(np.sum(th * th)) + mu * pv
            return F, lg + cfg.reg_weight * th + mu * pg
        return evaluate

    mu, capped = cfg.penalty_init, False
    while True:
        theta, _ = _penalty_descent(theta, evaluate_with(mu), cfg)
        value = _constraint_value(theta, constraint_fn, root)
        if value <= cfg.L * (1.0 + FEASIBILITY_RTOL):
            break
        if mu * cfg.penalty_growth > cfg.penalty_max:
            capped = True
            break
        mu *= cfg.penalty_growth

    if value > cfg.L:
        theta = theta * (cfg.L / value)
        value = _constraint_value(theta, constraint_fn, root)
    objective = loss_fn(theta)[0] + 0.5 * cfg.reg_weight * float(np.sum(theta * theta))
    return theta, objective, value, mu, capped


def _constraint_value(theta, constraint_fn, root) -> float:
    beta = theta @ root.T if theta.ndim == 2 else root @ theta
    return constraint_fn.value(beta)


class _Penalty:
    """把 √c 轉成 exact penalty max(0, √c − L)，並保留原始值供可行性檢查"""

    def __init__(self, constraint, L: float):
        self.constraint = constraint
        self.L = L

    def __call__(self, beta):
        if isinstance(self.constraint, _MulticlassConstraint):
            return self.constraint.penalty(beta, self.L)
        val, grad = self.constraint(beta)
        return (val - self.L, grad) if val > self.L else (0.0, np.zeros_like(beta))

    def value(self, beta) -> float:
        return self.constraint(beta)[0]


# ========== Step 7. 外層迴圈 ==========
def _prepare(data: Dataset, spec: KernelSpec, cfg: TrainConfig):
    if data.dim != spec.dim:
        raise ValueError(f"❌ 資料維度 {data.dim} 與核維度 {spec.dim} 不一致")
    if data.n == 0:
        raise ValueError("❌ 訓練資料為空")
    rng = np.random.default_rng(cfg.seed)
    domain = cfg.domain if cfg.domain is not None else data.feature_box
    X = spec.project_inputs(data.features)
    fmap = LandmarkMap(spec, select_landmarks(X, cfg.n_landmarks, rng))
    witnesses = _initial_witnesses(spec, domain, rng)
    return rng, domain, fmap, fmap.transform(X), witnesses


def _log_iteration(record: dict):
    if VERBOSE:
        print(f"🔁 外層第 {record['iteration']} 次：L̂={record['lipschitz']:.6g}  "
              f"限制值={record['constraint']:.6g}  目標={record['objective']:.6g}  "
              f"witness={record['witnesses']}  μ={record['penalty']:.3g}")


def _next_witness(cfg: TrainConfig, spec: KernelSpec, domain: Box, rng, argmax) -> np.ndarray:
    if cfg.witness_mode == GREEDY:
        return argmax
    return spec.project_inputs(domain.sample(rng), warn=False)


def train_binary(data: Dataset, spec: KernelSpec, cfg: TrainConfig) -> Tuple[Model, TrainReport]:
    if not data.is_binary:
        raise ValueError(f"❌ 二分類標籤必須為 ±1，收到 {data.classes.tolist()}")
    if cfg.constraint_mode == COORD_NYSTROM and not spec.is_product:
        raise ValueError("❌ CoordNystrom 需要乘積核")

    rng, domain, fmap, Phi, witnesses = _prepare(data, spec, cfg)
    y = data.labels.astype(float)
    theta = np.zeros(fmap.size)
    report = TrainReport(config=cfg.to_dict())
    model = fmap.to_model(theta)

    for i in range(cfg.outer_iters):
        constraint = _Penalty(_BinaryConstraint(cfg.constraint_mode, fmap, witnesses), cfg.L)
        theta, objective, value, mu, capped = _solve_penalised(
            theta, lambda th: _hinge(th, Phi, y), constraint, fmap.root, cfg)
        model = fmap.to_model(theta)
        estimate = empirical_lipschitz(model, domain, WITNESS_RESTARTS, seed=[cfg.seed, i])

        record = {"iteration": i, "lipschitz": estimate.value, "constraint": value ** 2,
                  "objective": objective, "witnesses": witnesses.n, "penalty": mu, "penalty_capped": capped}
        report.iterations.append(record)
        report.penalty_capped = capped
        _log_iteration(record)

        if estimate.value <= cfg.L * (1.0 + STOP_SLACK):
            report.converged = not capped
            break
        witnesses = witnesses.extend(_next_witness(cfg, spec, domain, rng, estimate.argmax), cfg.witness_mode)

    return model, report


def _class_estimate(models: Sequence[Model], domain: Box, cfg: TrainConfig, seed):
    dual = L2 if cfg.lip_norm == L2 else L1
    estimates = [empirical_lipschitz(m, domain, WITNESS_RESTARTS, seed=seed + [c], dual_norm=dual)
                 for c, m in enumerate(models)]
    return max(estimates, key=lambda e: e.value)


def train_multiclass(data: Dataset, spec: KernelSpec, cfg: TrainConfig) -> Tuple[List[Model], TrainReport]:
    classes = data.classes
    if classes.size < 2 or classes.size > 10:
        raise ValueError(f"❌ 多分類需要 2 到 10 個類別，收到 {classes.size}")
    if cfg.constraint_mode != HOLISTIC_NYSTROM:
        raise ValueError("❌ 多分類只支援 HolisticNystrom 限制")

    rng, domain, fmap, Phi, witnesses = _prepare(data, spec, cfg)
    y = np.searchsorted(classes, data.labels)
    Theta = np.zeros((classes.size, fmap.size))
    report = TrainReport(config=cfg.to_dict())
    report.config["classes"] = classes.tolist()
    models = [fmap.to_model(t) for t in Theta]

    for i in range(cfg.outer_iters):
        constraint = _Penalty(_MulticlassConstraint(cfg.lip_norm, fmap, witnesses, [cfg.seed, i]), cfg.L)
        Theta, objective, value, mu, capped = _solve_penalised(
            Theta, lambda th: _crammer_singer(th, Phi, y), constraint, fmap.root, cfg)
        models = [fmap.to_model(t) for t in Theta]
        estimate = _class_estimate(models, domain, cfg, [cfg.seed, i])

        record = {"iteration": i, "lipschitz": estimate.value,
                  "constraint": value ** 2 if cfg.lip_norm == L2 else value,
                  "objective": objective, "witnesses": witnesses.n, "penalty": mu, "penalty_capped": capped}
        report.iterations.append(record)
        report.penalty_capped = capped
        _log_iteration(record)

        if estimate.value <= cfg.L * (1.0 + STOP_SLACK):
            report.converged = not capped
            break
        witnesses = witnesses.extend(_next_witness(cfg, spec, domain, rng, estimate.argmax), cfg.witness_mode)

    return models, report


def predict(models, X) -> np.ndarray:
    """二分類回傳 ±1；多分類回傳類別索引"""
    if isinstance(models, Model):
        return np.where(models.decision(X) >= 0.0, 1, -1)
    return np.argmax(np.stack([m.decision(X) for m in models], axis=1), axis=1)
