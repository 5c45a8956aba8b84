"""
attacks.py
----------
本模組負責：
1. PGD 攻擊（ℓ2 / ℓ∞ 球 ∩ 輸入 box），目標函數為 cross-entropy 或 C&W margin，可指定 target；
2. 以遞增的 delta 掃描計算 robust accuracy（由較小半徑的對抗點 warm start）；
3. 逐樣本平行（ThreadPoolExecutor + tqdm），每個樣本使用獨立的 RNG stream。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, softmax
from tqdm import tqdm

from config import PGD_STEPS
from config_loader import MAX_WORKERS
from lipbound import L2, LINF
from process.dataset_process import Box, Dataset

CROSS_ENTROPY = "CrossEntropy"
CW_MARGIN = "CWMargin"


# ========== Step 1. 設定與報告 ==========
@dataclass
class AttackConfig:
    norm: str = L2
    delta: float = 0.1
    steps: int = PGD_STEPS
    step_size: Optional[float] = None
    objective: str = CROSS_ENTROPY
    targeted: Optional[int] = None
    random_init: bool = False
    input_box: Optional[Box] = None
    seed: int = 0

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ValueError(f"❌ 不支援的攻擊範數: {self.norm}")
        if self.delta < 0:
            raise ValueError(f"❌ delta 必須 >= 0，目前為 {self.delta}")
        if self.steps < 1:
            raise ValueError(f"❌ steps 必須 >= 1，目前為 {self.steps}")
        if self.objective not in (CROSS_ENTROPY, CW_MARGIN):
            raise ValueError(f"❌ 不支援的攻擊目標: {self.objective}")

    @property
    def effective_step(self) -> float:
        return self.step_size if self.step_size is not None else 2.0 * self.delta / self.steps

    def with_delta(self, delta: float) -> "AttackConfig":
        return AttackConfig(**{**self.__dict__, "delta": float(delta)})

    def to_dict(self) -> dict:
        data = asdict(self)
        data["step_size"] = self.effective_step
        data["input_box"] = None if self.input_box is None else {
            "low": self.input_box.low.tolist(), "high": self.input_box.high.tolist()}
        return data


@dataclass
class AttackResult:
    adversarial: np.ndarray
    objective: float
    initial_objective: float
    success: bool
    trace: List[np.ndarray] = field(default_factory=list)


@dataclass
class AttackReport:
    deltas: List[float]
    accuracy: List[float]
    clean_accuracy: float
    examples: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ========== Step 2. 打分器 ==========
class BinaryScorer:
    """
    二分類模型包裝成兩類 logits (−f, f)，類別順序為 (−1, +1)。
    model 只需提供 decision(X) 與 gradient(x)。
    """

    def __init__(self, model):
        self.model = model
        self.classes = np.array([-1, 1])

    def scores(self, x) -> np.ndarray:
        f = float(self.model.decision(np.asarray(x)[None, :])[0])
        return np.array([-f, f])

    def jacobian(self, x) -> np.ndarray:
        g = self.model.gradient(x)
        return np.stack([-g, g])

    def label(self, x) -> int:
        """f >= 0 判為 +1，與 trainer.predict 相同"""
        return 1 if float(self.model.decision(np.asarray(x)[None, :])[0]) >= 0.0 else -1


class MulticlassScorer:
    def __init__(self, models: Sequence, classes=None):
        self.models = list(models)
        self.classes = np.arange(len(self.models)) if classes is None else np.asarray(classes)

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x)[None, :]
        return np.array([float(m.decision(x)[0]) for m in self.models])

    def jacobian(self, x) -> np.ndarray:
        return np.stack([m.gradient(x) for m in self.models])

    def label(self, x):
        return self.classes[int(np.argmax(self.scores(x)))]


def _index_of(scorer, label) -> int:
    hits = np.flatnonzero(scorer.classes == label)
    if hits.size == 0:
        raise ValueError(f"❌ 未知的類別 {label}")
    return int(hits[0])


def predict_label(scorer, x):
    return scorer.label(x)


# ========== Step 3. 攻擊目標 ==========
def cw_margin(scores, y: int) -> float:
    """max_{c≠y} f^c − f^y；正值代表誤分類"""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size < 2:
        raise ValueError("❌ C&W margin 至少需要 2 個類別")
    return float(np.max(np.delete(scores, y)) - scores[y])


def _objective(scorer, x, y_idx: int, cfg: AttackConfig, with_grad: bool = True):
    """攻擊者最大化的目標值與梯度"""
    s = scorer.scores(x)
    target = y_idx if cfg.targeted is None else _index_of(scorer, cfg.targeted)
    sign = 1.0 if cfg.targeted is None else -1.0

    if cfg.objective == CROSS_ENTROPY:
        value = sign * (logsumexp(s) - s[target])
        if not with_grad:
            return value, None
        w = softmax(s)
        w[target] -= 1.0
        return value, sign * (w @ scorer.jacobian(x))

    others = np.delete(np.arange(s.size), target)
    rival = int(others[np.argmax(s[others])])
    value = sign * (s[rival] - s[target])
    if not with_grad:
        return value, None
    J = scorer.jacobian(x)
    return value, sign * (J[rival] - J[target])


# ========== Step 4. 投影與 PGD ==========
def project(z: np.ndarray, x0: np.ndarray, cfg: AttackConfig, box: Box) -> np.ndarray:
    """先投影到以 x0 為中心的範數球，再裁切到輸入 box"""
    diff = z - x0
    if cfg.norm == L2:
        n = np.linalg.norm(diff)
        if n > cfg.delta:
            diff = diff * (cfg.delta / n)
    else:
        diff = np.clip(diff, -cfg.delta, cfg.delta)
    return box.clip(x0 + diff)


def _random_start(x0, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    d = x0.size
    if cfg.norm == L2:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        return x0 + direction * cfg.delta * rng.uniform() ** (1.0 / d)
    return x0 + rng.uniform(-cfg.delta, cfg.delta, size=d)


def pgd_attack(scorer, x, y, cfg: AttackConfig, index: int = 0, start: Optional[np.ndarray] = None,
               keep_trace: bool = False) -> AttackResult:
    x0 = np.asarray(x, dtype=float)
    box = cfg.input_box if cfg.input_box is not None else Box.unit(x0.size)
    if not box.contains(x0, 1e-12):
        raise ValueError("❌ 攻擊起點不在輸入 box 內")
    y_idx = _index_of(scorer, y)

    def succeeded(point) -> bool:
        pred = predict_label(scorer, point)
        return pred != y if cfg.targeted is None else pred == cfg.targeted

    init_obj = _objective(scorer, x0, y_idx, cfg, with_grad=False)[0]
    if cfg.delta == 0.0:
        return AttackResult(x0.copy(), init_obj, init_obj, succeeded(x0), [x0.copy()] if keep_trace else [])

    rng = np.random.default_rng([cfg.seed, index])
    if start is not None:
        current = project(np.asarray(start, dtype=float), x0, cfg, box)
    elif cfg.random_init:
        current = project(_random_start(x0, cfg, rng), x0, cfg, box)
    else:
        current = x0.copy()

    value, grad = _objective(scorer, current, y_idx, cfg)
    best, best_value = current, value
    trace = [current] if keep_trace else []
    step = cfg.effective_step
    for _ in range(cfg.steps):
        if cfg.norm == L2:
            n = np.linalg.norm(grad)
            if n == 0.0:
                break
            direction = grad / n
        else:
            direction = np.sign(grad)
            if not np.any(direction):
                break
        current = project(current + step * direction, x0, cfg, box)
        value, grad = _objective(scorer, current, y_idx, cfg)
        if keep_trace:
            trace.append(current)
        if value > best_value:
            best, best_value = current, value

    return AttackResult(best, float(best_value), float(init_obj), succeeded(best), trace)


# ========== Step 5. Robust accuracy ==========
def _sweep_one(scorer, x, y, deltas, cfg: AttackConfig, index: int) -> dict:
    clean = predict_label(scorer, x) == y
    broken = not clean
    correct, adversarial, objectives = [], [], []
    previous = None
    for delta in deltas:
        result = pgd_attack(scorer, x, y, cfg.with_delta(delta), index=index, start=previous)
        broken = broken or (predict_label(scorer, result.adversarial) != y)
        correct.append(not broken)
        adversarial.append(result.adversarial.tolist())
        objectives.append(result.objective)
        previous = result.adversarial
    return {"index": index, "clean_scores": scorer.scores(x).tolist(), "correct": correct,
            "adversarial": adversarial, "objective": objectives}


def robust_accuracy(scorer, data: Dataset, deltas: Sequence[float], cfg: AttackConfig,
                    threads: int = MAX_WORKERS) -> AttackReport:
    """逐 delta（遞增）計算仍被正確分類的比例；較大半徑由較小半徑的對抗點 warm start"""
    if data.n == 0:
        raise ValueError("❌ 攻擊資料為空")
    deltas = sorted(float(d) for d in deltas)
    if any(d < 0 for d in deltas):
        raise ValueError("❌ delta 必須 >= 0")

    def run(i):
        return _sweep_one(scorer, data.features[i], data.labels[i], deltas, cfg, i)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        examples = list(tqdm(executor.map(run, range(data.n)), total=data.n, desc="PGD 攻擊中"))

    correct = np.array([e["correct"] for e in examples], dtype=bool)
    clean = float(np.mean([predict_label(scorer, x) == y for x, y in zip(data.features, data.labels)]))
    return AttackReport(deltas=deltas, accuracy=correct.mean(axis=0).tolist(), clean_accuracy=clean,
                        examples=examples, config=cfg.to_dict())
