"""
main.py
-------
Lipschitz 核機器工具命令列入口

用法：
    python backend/main.py train --config configs/train_blobs.json --seed 0
    python backend/main.py attack --model <dir>/model.txt --delta 0
    python backend/main.py spectrum --kernel periodic --v 3.14159 --sigma2 0.5
"""

import argparse
import sys
from typing import Dict, List

from config import COMMANDS
from config_loader import print_settings
from task_runner import EXIT_CONFIG_ERROR, run_task


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipkernel",
        allow_abbrev=False,
        description="Lipschitz 限制核機器：訓練、攻擊、認證與頻譜分析",
        epilog="其他 --key value 形式的參數會覆寫設定檔中的同名鍵（kebab-case）",
    )
    parser.add_argument("command", choices=COMMANDS, help="子命令")
    parser.add_argument("--config", default=None, help="JSON 設定檔路徑")
    parser.add_argument("--seed", type=int, default=None, help="隨機種子")
    parser.add_argument("--threads", type=int, default=None, help="平行執行緒上限")
    parser.add_argument("--out", default=None, help="結果輸出目錄（預設自動建立於 workspace/results）")
    return parser


def parse_overrides(extra: List[str]) -> Dict[str, str]:
    """把 ['--delta', '0', '--random-init'] 轉成 {'delta': '0', 'random-init': 'true'}"""
    overrides: Dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise ValueError(f"❌ 無法解析的參數: {token}")
        key, eq, value = token[2:].partition("=")
        if not eq:
            if i + 1 < len(extra) and not extra[i + 1].startswith("--"):
                value = extra[i + 1]
                i += 1
            else:
                value = "true"
        overrides[key] = value
        i += 1
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(extra)
    except ValueError as e:
        print(e)
        return EXIT_CONFIG_ERROR

    for key in ("seed", "threads", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value

    print_settings(args.threads)
    return run_task(args.command, args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
