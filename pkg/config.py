# /superlab/config.py

import sys
import logging
from dotenv import load_dotenv
import os

# --- LOGGING SETUP ---
logger = logging.getLogger()
logger.setLevel(logging.INFO)

if not logger.handlers:
    handler = logging.StreamHandler(sys.stdout)
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - [%(funcName)s:%(lineno)d] - %(message)s')
    handler.setFormatter(formatter)
    logger.addHandler(handler)


# --- CONSTANTS & CONFIGURATION ---
TOOL_NAME = "superlab"
CODE_VERSION = "0.3.0"

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
COMMANDS_DIR = os.path.join(BASE_DIR, "commands")
CONFIGS_DIR = os.path.join(BASE_DIR, "configs")
DEFAULT_CONFIG_FILE = os.path.join(CONFIGS_DIR, "default.yaml")
DEFAULT_OUT_DIR = os.path.join(BASE_DIR, "runs")
MANIFEST_FILE_NAME = "manifest.json"

load_dotenv(os.path.join(BASE_DIR, ".env"))
SEED_ENV_VAR = f"{TOOL_NAME.upper()}_SEED"
WORKERS_ENV_VAR = f"{TOOL_NAME.upper()}_WORKERS"

# Kernel tails below this are treated as exactly zero in sheet integrals.
KERNEL_TAIL_TOL = 1e-12
# Dense D2 arrays are n_t x n_t per path.
MAX_SECOND_DERIVATIVE_STEPS = 2048
# Paths per task when Monte Carlo work is split across workers. Must not depend on the worker count.
PATH_CHUNK_SIZE = 1024
VERDICT_MARGIN = 0.05
BLOWUP_LIMIT = 1e6
CFL_LIMIT = 0.25


def set_verbose(verbose: bool) -> None:
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
