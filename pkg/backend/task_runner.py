"""
task_runner.py
--------------
Lipschitz 核機器工具的核心執行器
支援：
- 七個子命令：gen-data / train / attack / certify / scatter / spectrum / lipschitz
- 設定合併：命令預設值 ⊕ JSON 設定檔 ⊕ 命令列覆寫（kebab-case）
- 任務狀態 JSON 持久化
- 結束碼：0 成功、1 數值未收斂、2 設定錯誤
"""

import json
import math
import time
import uuid
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from easydict import EasyDict

from attacks import AttackConfig, BinaryScorer, MulticlassScorer, robust_accuracy
from certify import adversarial_vs_regularised, random_kernel_models, run_oracle_suite, scatter_summary
from config import COMMANDS, WITNESS_RESTARTS
from config_loader import LOGS_DIR, MAX_WORKERS
from file_manager import (ModelBundle, create_result_dir, list_result_files, load_model, save_model,
                          write_csv, write_dataset_csv, write_report)
from kernels import GAUSSIAN, INVERSE, PERIODIC, BaseKernel, KernelSpec, median_bandwidth
from lipbound import (COORD_NYSTROM, EMPIRICAL_SEARCH, EXACT_DIAG, HOLISTIC_NYSTROM, RKHS_NORM,
                      ConvergenceError, WitnessSet, empirical_lipschitz, gtg_estimate, rkhs_norm_bound)
from process.dataset_process import Box, Dataset, apply_normalisation, gen_synthetic, load_csv
from spectrum import (SpectrumReport, assumption_constants, count_inversions, eigen_condition_check,
                      gaussian_eigenvalues_closed_form, gaussian_empirical_eigenvalues,
                      inverse_kernel_spectrum, nystrom_error_curve, periodic_eigenvalues,
                      periodic_eigenvalues_bessel, theoretical_sample_size)
from trainer import TrainConfig, predict, train_binary, train_multiclass

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(ValueError):
    """執行設定錯誤（未知命令、未知鍵、缺少必要欄位）"""


# ====== 任務狀態持久化 ======
def write_task_state(task_id: str, state: Dict[str, Any]):
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    state_path = LOGS_DIR / f"task_{task_id}.json"
    with open(state_path, "w", encoding="utf-8") as f:
        json.dump(state, f, indent=2, ensure_ascii=False)
    return state_path


def read_task_state(task_id: str) -> Optional[Dict[str, Any]]:
    state_path = LOGS_DIR / f"task_{task_id}.json"
    if not state_path.exists():
        return None
    try:
        with open(state_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except Exception:
        return None


# ====== 命令預設值 ======
_DATA_KEYS = {"data": None, "data_kind": "blobs", "n": 50, "classes": 2, "dim": 2, "cluster_std": 0.08}
_KERNEL_KEYS = {"kernel": GAUSSIAN, "sigma": "median", "v": None}

DEFAULTS: Dict[str, dict] = {
    "gen-data": {**_DATA_KEYS},
    "train": {**_DATA_KEYS, **_KERNEL_KEYS, "L": 1.0, "reg_weight": 1e-3, "constraint_mode": HOLISTIC_NYSTROM,
              "witness_mode": "Greedy", "outer_iters": 20, "penalty_init": 1.0, "penalty_growth": 10.0,
              "penalty_max": 1e6, "inner_max_iter": 300, "n_landmarks": 256, "lip_norm": "L2"},
    "attack": {**_DATA_KEYS, "model": None, "norm": "L2", "deltas": [0.0, 0.05, 0.1, 0.2], "delta": None,
               "objective": "CWMargin", "steps": 100, "step_size": None, "random_init": False,
               "targeted": None},
    "certify": {"n_cases": 500, "n_grid": 41, "max_support": 8, "kinds": None},
    "scatter": {**_DATA_KEYS, "n_models": 100, "n_anchors": 100, "delta": 0.05, "norm": "L2"},
    "spectrum": {"kernel": PERIODIC, "v": math.pi, "sigma2": 0.5, "J": 50, "quad_points": 2048,
                 "c4": 2.0, "c6": 1.6, "eps": 0.1, "confidence": 0.05, "degree_cap": 8, "d": 2,
                 "empirical_n": 2000, "nystrom_d": 4, "n_list": [4, 8, 16, 32, 64, 128, 256], "trials": 20},
    "lipschitz": {"model": None, "witnesses": 64, "restarts": WITNESS_RESTARTS},
}
_COMMON = {"seed": 0, "threads": None, "out": None}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return text


def resolve_config(command: str, config_path: Optional[str] = None,
                   overrides: Optional[Dict[str, Any]] = None) -> EasyDict:
    """命令預設值 ⊕ JSON 設定檔 ⊕ 命令列覆寫；未知的鍵視為設定錯誤"""
    if command not in COMMANDS:
        raise ConfigError(f"❌ 未知命令: {command}（可用: {', '.join(COMMANDS)}）")
    cfg = EasyDict({**_COMMON, **DEFAULTS[command]})

    layers = []
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"❌ 設定檔不存在: {path}")
        try:
            layers.append(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigError(f"❌ 設定檔不是合法 JSON: {path} ({e})") from None
    if overrides:
        layers.append({k: _parse_value(v) if isinstance(v, str) else v for k, v in overrides.items()})

    for layer in layers:
        for key, value in layer.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"❌ 命令 {command} 不接受設定鍵: {key}")
            cfg[key] = value
    if cfg.threads is None:
        cfg.threads = MAX_WORKERS
    return cfg


# ====== 共用組件 ======
def _dataset(cfg: EasyDict) -> Dataset:
    if cfg.data:
        return load_csv(cfg.data)
    return gen_synthetic(cfg.data_kind, int(cfg.n), int(cfg.classes), int(cfg.dim), int(cfg.seed),
                         float(cfg.cluster_std))


def _kernel(cfg: EasyDict, data: Dataset) -> KernelSpec:
    if cfg.kernel == INVERSE:
        return KernelSpec.inverse(data.dim)
    sigma = median_bandwidth(data.features) if cfg.sigma == "median" else float(cfg.sigma)
    if cfg.kernel == GAUSSIAN:
        return KernelSpec.product(BaseKernel.gaussian(sigma), data.dim)
    if cfg.kernel == PERIODIC:
        if cfg.v is None:
            raise ConfigError("❌ 週期核需要設定 v（週期）")
        return KernelSpec.product(BaseKernel.periodic(float(cfg.v), sigma), data.dim)
    raise ConfigError(f"❌ 不支援的核: {cfg.kernel}")


def _out_dir(cfg: EasyDict, command: str) -> Path:
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return Path(cfg.out)
    return Path(create_result_dir(prefix=command.replace("-", "_")))


def _require(cfg: EasyDict, key: str):
    if not cfg.get(key):
        raise ConfigError(f"❌ 缺少必要設定: {key}")


def _bundle_data(cfg: EasyDict, bundle: ModelBundle) -> Dataset:
    """攻擊資料使用模型檔中保存的正規化常數，與訓練時處於同一空間"""
    if cfg.data:
        raw = load_csv(cfg.data, normalise=False)
        if bundle.feature_min is not None:
            raw = Dataset(apply_normalisation(raw.features, bundle.feature_min, bundle.feature_max), raw.labels)
        return raw
    return _dataset(cfg)


def _scorer(bundle: ModelBundle):
    if bundle.is_binary:
        return BinaryScorer(bundle.models[0])
    return MulticlassScorer(bundle.models, bundle.classes)


def _accuracy(bundle: ModelBundle, data: Dataset) -> float:
    if bundle.is_binary:
        return float(np.mean(predict(bundle.models[0], data.features) == data.labels))
    pred = np.asarray(bundle.classes)[predict(bundle.models, data.features)]
    return float(np.mean(pred == data.labels))


# ====== 子命令 ======
def cmd_gen_data(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    data = gen_synthetic(cfg.data_kind, int(cfg.n), int(cfg.classes), int(cfg.dim), int(cfg.seed),
                         float(cfg.cluster_std))
    path = write_dataset_csv(data, out / "data.csv")
    return {"rows": data.n, "dim": data.dim, "classes": data.classes.tolist(), "data_file": path}, EXIT_OK


def cmd_train(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    data = _dataset(cfg)
    spec = _kernel(cfg, data)
    tcfg = TrainConfig(L=float(cfg.L), reg_weight=float(cfg.reg_weight), constraint_mode=cfg.constraint_mode,
                       witness_mode=cfg.witness_mode, outer_iters=int(cfg.outer_iters),
                       penalty_init=float(cfg.penalty_init), penalty_growth=float(cfg.penalty_growth),
                       penalty_max=float(cfg.penalty_max), inner_max_iter=int(cfg.inner_max_iter),
                       n_landmarks=int(cfg.n_landmarks), seed=int(cfg.seed), lip_norm=cfg.lip_norm,
                       loss="Hinge" if data.is_binary else "CrammerSinger")
    print(f"🚀 開始訓練：{spec.describe()}，L={tcfg.L}，限制={tcfg.constraint_mode}，witness={tcfg.witness_mode}")
    if data.is_binary:
        model, report = train_binary(data, spec, tcfg)
        bundle = ModelBundle([model], None, data.feature_min, data.feature_max)
    else:
        models, report = train_multiclass(data, spec, tcfg)
        bundle = ModelBundle(models, data.classes.tolist(), data.feature_min, data.feature_max)

    model_path = save_model(bundle, out / "model.txt")
    result = {"kernel": spec.to_dict(), "train": report.to_dict(), "clean_accuracy": _accuracy(bundle, data),
              "model_file": model_path}
    if not report.converged:
        print("[⚠️ 警告] 訓練未在 outer_iters 內達到 Lipschitz 停止條件")
    return result, EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_attack(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    _require(cfg, "model")
    bundle = load_model(cfg.model)
    data = _bundle_data(cfg, bundle)
    deltas = [float(cfg.delta)] if cfg.delta is not None else [float(d) for d in cfg.deltas]
    acfg = AttackConfig(norm=cfg.norm, delta=max(deltas), steps=int(cfg.steps), step_size=cfg.step_size,
                        objective=cfg.objective, targeted=cfg.targeted, random_init=bool(cfg.random_init),
                        input_box=Box.unit(data.dim), seed=int(cfg.seed))
    report = robust_accuracy(_scorer(bundle), data, deltas, acfg, threads=int(cfg.threads))
    write_csv(out / "robust_accuracy.csv", ["delta", "accuracy"], zip(report.deltas, report.accuracy))
    for delta, acc in zip(report.deltas, report.accuracy):
        print(f"🛡️  delta={delta:g}  robust accuracy={acc:.4f}")
    return {"attack": report.to_dict()}, EXIT_OK


def cmd_certify(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    suite = run_oracle_suite(cfg)
    for law, counts in suite["laws"].items():
        mark = "✅" if counts["passed"] == counts["total"] else "❌"
        print(f"{mark} {law}: {counts['passed']}/{counts['total']}")
    return {"certify": suite}, EXIT_OK if suite["all_passed"] else EXIT_NOT_CONVERGED


def cmd_scatter(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    data = _dataset(cfg)
    box = Box.unit(data.dim)
    models = random_kernel_models(box, int(cfg.n_models), int(cfg.n_anchors), int(cfg.seed))
    rows = adversarial_vs_regularised(models, data, float(cfg.delta), cfg.norm, int(cfg.seed), box,
                                      threads=int(cfg.threads))
    write_csv(out / "scatter.csv", ["model_id", "adversarial_risk", "regularised_risk"],
              ([r["model_id"], r["adversarial_risk"], r["regularised_risk"]] for r in rows))
    summary = scatter_summary(rows)
    print(f"📈 對角線下方比例 {summary['fraction_below_diagonal']:.3f}，Pearson {summary['pearson']:.3f}")
    return {"scatter": summary, "rows": rows}, EXIT_OK


def cmd_spectrum(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    result: Dict[str, Any] = {}
    if cfg.kernel == PERIODIC:
        base = BaseKernel.periodic(float(cfg.v), math.sqrt(float(cfg.sigma2)))
        report = periodic_eigenvalues(base, int(cfg.J), int(cfg.quad_points))
        constants = assumption_constants(base, float(cfg.eps), float(cfg.c4), float(cfg.c6))
        bessel = periodic_eigenvalues_bessel(base, int(cfg.J))
        lam = report.eigenvalues
        # 高階 λ_j 遠小於積分誤差，條件檢查用閉式值
        closed = SpectrumReport(bessel, PERIODIC, report.params)
        result.update({
            "eigen_sum": float(lam[0] + 2.0 * lam[1:].sum()),
            "max_bessel_deviation": float(np.max(np.abs(lam - bessel))),
            "condition_check": eigen_condition_check(closed, float(cfg.c4), float(cfg.c6), int(cfg.J)),
            "assumption_constants": asdict(constants),
            "theoretical_sample_size": theoretical_sample_size(constants, float(cfg.eps), float(cfg.confidence)),
        })
        curve_base = base
    elif cfg.kernel == GAUSSIAN:
        sigma = math.sqrt(float(cfg.sigma2))
        report = gaussian_eigenvalues_closed_form(sigma, int(cfg.J))
        empirical = gaussian_empirical_eigenvalues(sigma, int(cfg.empirical_n), 3, int(cfg.seed))
        result["empirical_top3"] = empirical.tolist()
        curve_base = BaseKernel.gaussian(sigma)
    elif cfg.kernel == INVERSE:
        report = inverse_kernel_spectrum(int(cfg.d), int(cfg.degree_cap))
        curve_base = None
    else:
        raise ConfigError(f"❌ 不支援的核: {cfg.kernel}")

    write_csv(out / "spectrum.csv", ["j", "lambda"], report.rows())
    result["spectrum"] = report.to_dict()

    if curve_base is not None and cfg.trials:
        curve = nystrom_error_curve(curve_base, int(cfg.nystrom_d), [int(n) for n in cfg.n_list],
                                    int(cfg.trials), int(cfg.seed), threads=int(cfg.threads))
        write_csv(out / "nystrom_curve.csv", ["n", "median_error"], ((c["n"], c["median_error"]) for c in curve))
        result["nystrom_curve"] = curve
        result["nystrom_inversions"] = count_inversions([c["median_error"] for c in curve])
    return result, EXIT_OK


def cmd_lipschitz(cfg: EasyDict, out: Path) -> Tuple[dict, int]:
    _require(cfg, "model")
    bundle = load_model(cfg.model)
    kernel = bundle.kernel
    domain = Box.unit(kernel.dim)
    rng = np.random.default_rng(int(cfg.seed))
    witnesses = WitnessSet(kernel.project_inputs(domain.sample(rng, int(cfg.witnesses)), warn=False))

    per_model = []
    for index, model in enumerate(bundle.models):
        estimates = {}
        if kernel.is_product:
            estimates[EXACT_DIAG] = gtg_estimate(model, None, EXACT_DIAG)
            estimates[COORD_NYSTROM] = gtg_estimate(model, witnesses, COORD_NYSTROM)
        estimates[HOLISTIC_NYSTROM] = gtg_estimate(model, witnesses, HOLISTIC_NYSTROM)
        estimates[RKHS_NORM] = rkhs_norm_bound(model)
        estimates[EMPIRICAL_SEARCH] = empirical_lipschitz(model, domain, int(cfg.restarts), [int(cfg.seed), index])
        for name, est in estimates.items():
            print(f"📏 模型 {index} {name:>16}: L = {est.lipschitz:.10g}")
        per_model.append({name: est.to_dict() for name, est in estimates.items()})
    return {"kernel": kernel.to_dict(), "estimates": per_model}, EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "certify": cmd_certify,
    "scatter": cmd_scatter,
    "spectrum": cmd_spectrum,
    "lipschitz": cmd_lipschitz,
}


# ====== 核心任務執行 ======
def run_task(command: str, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
             task_id: Optional[str] = None) -> int:
    """執行一個子命令，寫出報告並回傳結束碼"""
    task_id = task_id or str(uuid.uuid4())[:8]
    cfg, out = None, None
    try:
        cfg = resolve_config(command, config_path, overrides)
        out = _out_dir(cfg, command)
        write_task_state(task_id, {"status": "running", "command": command, "result_dir": str(out)})

        started = time.time()
        result, code = HANDLERS[command](cfg, out)
        report = {"command": command, "config": dict(cfg), "seed": cfg.seed, "exit_code": code,
                  "elapsed_seconds": round(time.time() - started, 3), "result": result}
        write_report(report, out / "report.json")

        files = list_result_files(out)
        write_task_state(task_id, {"status": "finished", "command": command, "result_dir": str(out),
                                   "exit_code": code, "files": files})
        print(f"✅ 任務完成：{task_id}（exit {code}）")
        return code

    except ValueError as e:
        write_task_state(task_id, {"status": "error", "command": command, "message": str(e)})
        print(f"❌ 設定錯誤 {task_id}: {e}")
        return EXIT_CONFIG_ERROR
    except (ConvergenceError, RuntimeError) as e:
        write_task_state(task_id, {"status": "error", "command": command, "message": str(e)})
        if out is not None:
            partial = getattr(e, "best", None)
            write_report({"command": command, "config": dict(cfg), "seed": cfg.seed,
                          "exit_code": EXIT_NOT_CONVERGED, "error": str(e), "partial": partial}, out / "report.json")
        print(f"❌ 數值計算未收斂 {task_id}: {e}")
        return EXIT_NOT_CONVERGED
