# 版本字串會寫入每份報告與模型檔
ARTIFACT_VERSION = 'lipkernel-1.0.0'
MODEL_FORMAT_VERSION = 1

# ---- 線性代數 ----
PINV_RTOL = 1e-10            # 丟棄 < PINV_RTOL * lambda_max(K) 的特徵值
GRAM_BLOCK_ROWS = 256        # Gram 逐列分塊大小
POWER_TOL = 1e-10
POWER_MAX_ITER = 10000

# ---- Lipschitz 估計 ----
ALTERNATION_MAX_ROUNDS = 500
ALTERNATION_TOL = 1e-8
ALTERNATION_RESTARTS = 5
WITNESS_RESTARTS = 10        # greedy witness / 經驗 Lipschitz 的隨機重啟次數
ASCENT_MAX_ITER = 200
PERIODIC_SLOPE_GRID = 4096   # 週期核 growth function 斜率的網格點數

# ---- 訓練 ----
INITIAL_WITNESSES = 15
MAX_LANDMARKS = 256          # 完整規模用 1000，桌機規模用 min(l, 256)
STOP_SLACK = 0.05            # 經驗 Lipschitz <= L * (1 + STOP_SLACK) 即停止
FEASIBILITY_RTOL = 1e-3
INNER_MAX_ITER = 300
INNER_STEP_INIT = 1.0
INNER_STEP_MIN = 1e-10
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5

# ---- 攻擊 ----
PGD_STEPS = 100
DEFAULT_INPUT_LOW = 0.0
DEFAULT_INPUT_HIGH = 1.0

# ---- 認證 oracle ----
DUAL_SCAN_POINTS = 512
GOLDEN_TOL = 1e-10
PRIMAL_MAX_SUPPORT = 8
PRIMAL_MAX_GRID = 64

# ---- 頻譜 ----
INVERSE_MAX_DIM = 4
INVERSE_MAX_DEGREE = 10
MIN_QUAD_POINTS = 1024

# 常用的 CLI 子命令
# gen-data / train / attack / certify / scatter / spectrum / lipschitz
COMMANDS = ('gen-data', 'train', 'attack', 'certify', 'scatter', 'spectrum', 'lipschitz')
