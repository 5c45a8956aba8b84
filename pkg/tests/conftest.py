import os
import sys
import tempfile
from pathlib import Path

BACKEND_DIR = Path(__file__).resolve().parent.parent / "backend"
sys.path.insert(0, str(BACKEND_DIR))

# config_loader 在匯入時讀取環境變數並建立工作目錄
os.environ.setdefault("WORKSPACE_PATH", tempfile.mkdtemp(prefix="lipkernel_ws_"))
os.environ.setdefault("VERBOSE", "0")
os.environ.setdefault("MAX_WORKERS", "2")
