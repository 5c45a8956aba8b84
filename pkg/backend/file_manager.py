"""
file_manager.py
---------------
本模組負責：
1. 自動為每次執行建立獨立的結果資料夾；
2. 模型檔的保存與讀取（版本化文字格式，17 位有效數字）；
3. 報告（JSON 相容文字）與 CSV（LF 換行）的輸出；
4. 列出結果目錄中的檔案。
"""

import csv
import json
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from config import ARTIFACT_VERSION, MODEL_FORMAT_VERSION
from config_loader import RESULTS_DIR
from kernels import KernelSpec
from lipbound import Model

MODEL_MAGIC = "# lipkernel model"


def fmt(x) -> str:
    return format(float(x), ".17g")


# ========== Step 1. 建立結果目錄 ==========
def create_result_dir(prefix: str = "task") -> str:
    """
    為每次任務建立獨立結果資料夾
    範例: workspace/results/train_20251022_153045_ab12cd34/
    """
    timestamp = time.strftime("%Y%m%d_%H%M%S")
    unique_id = str(uuid.uuid4())[:8]
    result_dir = Path(RESULTS_DIR) / f"{prefix}_{timestamp}_{unique_id}"
    os.makedirs(result_dir, exist_ok=True)

    print(f"📁 已建立結果目錄: {result_dir}")
    return str(result_dir)


def list_result_files(result_dir: str) -> list:
    """列出指定結果目錄中的所有檔案（遞迴），回傳相對路徑"""
    result_dir = Path(result_dir)
    if not result_dir.exists():
        return []
    return sorted(str(p.relative_to(result_dir)) for p in result_dir.rglob("*") if p.is_file())


# ========== Step 2. 模型檔 ==========
@dataclass
class ModelBundle:
    """一個（二分類）或多個（每類一個）共用 anchors 的核模型，以及特徵正規化常數"""
    models: List[Model]
    classes: Optional[List[int]] = None
    feature_min: Optional[np.ndarray] = None
    feature_max: Optional[np.ndarray] = None

    @property
    def is_binary(self) -> bool:
        return self.classes is None

    @property
    def kernel(self) -> KernelSpec:
        return self.models[0].kernel


def save_model(bundle: ModelBundle, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = bundle.models[0]
    lines = [
        MODEL_MAGIC,
        f"format_version {MODEL_FORMAT_VERSION}",
        f"artifact_version {ARTIFACT_VERSION}",
        f"kernel {json.dumps(first.kernel.to_dict(), sort_keys=True)}",
        f"scale {int(first.scale)}",
        "classes " + ("binary" if bundle.is_binary else " ".join(str(c) for c in bundle.classes)),
        f"n_anchors {first.n_anchors}",
        f"dim {first.dim}",
    ]
    if bundle.feature_min is not None:
        lines.append("feature_min " + " ".join(fmt(v) for v in bundle.feature_min))
        lines.append("feature_max " + " ".join(fmt(v) for v in bundle.feature_max))
    lines.append("anchors")
    lines.extend(" ".join(fmt(v) for v in row) for row in first.anchors)
    lines.append("coeffs")
    lines.extend(" ".join(fmt(v) for v in m.coeffs) for m in bundle.models)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"💾 模型已保存: {path}")
    return str(path)


def load_model(path) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"❌ 模型檔不存在: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"❌ 不是模型檔: {path}")
    try:
        return _parse_model(lines)
    except (IndexError, KeyError) as e:
        raise ValueError(f"❌ 模型檔不完整或缺少欄位 {e}: {path}") from e


def _parse_model(lines) -> ModelBundle:
    header, i = {}, 1
    while i < len(lines) and lines[i] != "anchors":
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    if i == len(lines):
        raise ValueError(f"❌ 模型檔格式錯誤（第 {i + 1} 行之前找不到 anchors 區段）")
    if int(header["format_version"]) != MODEL_FORMAT_VERSION:
        raise ValueError(f"❌ 不支援的模型格式版本: {header['format_version']}")

    n_anchors, dim = int(header["n_anchors"]), int(header["dim"])
    if i + 1 + n_anchors >= len(lines):
        raise ValueError(f"❌ 模型檔格式錯誤（anchors 區段應有 {n_anchors} 行，檔案在第 {len(lines)} 行結束）")
    anchors = np.array([[float(v) for v in lines[i + 1 + a].split()] for a in range(n_anchors)]).reshape(n_anchors, dim)
    i += 1 + n_anchors
    if lines[i] != "coeffs":
        raise ValueError(f"❌ 模型檔格式錯誤（第 {i + 1} 行應為 coeffs）")
    coeffs = [np.array([float(v) for v in line.split()]) for line in lines[i + 1:] if line.strip()]
    if not coeffs:
        raise ValueError(f"❌ 模型檔格式錯誤（第 {i + 1} 行之後沒有係數）")

    kernel = KernelSpec.from_dict(json.loads(header["kernel"]))
    scale = bool(int(header["scale"]))
    classes = None if header["classes"] == "binary" else [int(c) for c in header["classes"].split()]
    to_array = lambda key: np.array([float(v) for v in header[key].split()]) if key in header else None
    return ModelBundle([Model(kernel, anchors, c, scale) for c in coeffs], classes,
                       to_array("feature_min"), to_array("feature_max"))


# ========== Step 3. 報告與 CSV ==========
def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"無法序列化的型別: {type(obj)!r}")


def write_report(report: dict, path) -> str:
    """JSON 相容的結構化文字；浮點數以 repr 輸出（最短可完整還原的位數，至多 17 位）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"artifact_version": ARTIFACT_VERSION, **report}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(document, f, indent=2, ensure_ascii=False, default=_jsonable)
        f.write("\n")
    print(f"📝 報告已寫入: {path}")
    return str(path)


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    print(f"📊 CSV 已寫入: {path}")
    return str(path)


def write_dataset_csv(dataset, path) -> str:
    """第 0 欄為標籤，其餘為特徵"""
    rows = ([int(y)] + [float(v) for v in x] for x, y in zip(dataset.features, dataset.labels))
    header = ["label"] + [f"x{j + 1}" for j in range(dataset.dim)]
    return write_csv(path, header, rows)
