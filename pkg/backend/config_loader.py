"""
config_loader.py
----------------
本模組負責：
1. 從 .env 檔案載入執行緒數與輸出等基本設定；
2. 自動建立 workspace 目錄結構（data / results / logs）；
3. 檢查設定合法性並提供設定狀態輸出；
4. 提供全域常數供其他模組匯入使用。
"""

import os
from pathlib import Path
from dotenv import load_dotenv


# ========== Step 1. 定義路徑常數 ==========
BASE_DIR = Path(__file__).resolve().parent.parent   # 專案根目錄
ENV_FILE = BASE_DIR / ".env"
EXAMPLE_ENV_FILE = BASE_DIR / ".env.example"


# ========== Step 2. 自動建立 .env.example 檔案 ==========
if not EXAMPLE_ENV_FILE.exists():
    with open(EXAMPLE_ENV_FILE, "w", encoding="utf-8") as f:
        f.write(
            "# Lipschitz 核機器工具設定檔案範例\n"
            "# 請複製為 .env 後依需要修改。\n\n"
            "WORKSPACE_PATH=./workspace\n"
            "MAX_WORKERS=4\n"
            "VERBOSE=1\n"
        )


# ========== Step 3. 載入 .env 檔案 ==========
load_dotenv(ENV_FILE)


# ========== Step 4. 讀取設定項 ==========
_workspace = os.getenv("WORKSPACE_PATH", "workspace")
WORKSPACE_PATH = Path(_workspace) if Path(_workspace).is_absolute() else BASE_DIR / _workspace
DATA_DIR = WORKSPACE_PATH / "data"
RESULTS_DIR = WORKSPACE_PATH / "results"
LOGS_DIR = WORKSPACE_PATH / "logs"

MAX_WORKERS = int(os.getenv("MAX_WORKERS", "4"))
VERBOSE = os.getenv("VERBOSE", "1").strip().lower() not in ("0", "false", "no", "")


# ========== Step 5. 檢查設定合法性 ==========
if MAX_WORKERS < 1:
    raise ValueError(f"❌ MAX_WORKERS 必須 >= 1，目前為 {MAX_WORKERS}")


# ========== Step 6. 自動建立工作目錄 ==========
for directory in [WORKSPACE_PATH, DATA_DIR, RESULTS_DIR, LOGS_DIR]:
    os.makedirs(directory, exist_ok=True)


# ========== Step 7. 除錯輸出（列印目前有效設定） ==========
def print_settings(threads: int = None):
    print("=" * 60)
    print("🔧 Lipschitz 核機器工具設定載入完成")
    print(f"📂 工作區路徑:    {WORKSPACE_PATH}")
    print(f"⚙️  最大平行執行緒數: {threads or MAX_WORKERS}")
    print(f"🗒️  詳細輸出:      {'開' if VERBOSE else '關'}")
    print("=" * 60)


# ========== Step 8. 匯出可供全域呼叫的常數 ==========
__all__ = [
    "BASE_DIR",
    "WORKSPACE_PATH",
    "DATA_DIR",
    "RESULTS_DIR",
    "LOGS_DIR",
    "MAX_WORKERS",
    "VERBOSE",
    "print_settings",
]
