"""
kergpk - Runtime configuration
Values come from the environment (optionally a .env file) with safe defaults.
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

from kergpk.exceptions import ParameterError

load_dotenv()

# ========================
# DEFAULTS
# ========================

DEFAULT_SEED = 20240101
DEFAULT_LEVEL = 0.05
DEFAULT_PERMUTATIONS = 10000
DEFAULT_ENUMERATION_CAP = 1_000_000
DEFAULT_LOG_LEVEL = "WARNING"


@dataclass(frozen=True)
class Settings:
    threads: int
    seed: int
    level: float
    permutations: int
    enumeration_cap: int
    log_level: str


def _int_env(name: str, default: int, minimum: int = 1) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ParameterError(f"{name} must be an integer, got {raw!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return value


def _float_env(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ParameterError(f"{name} must be a number, got {raw!r}")


def get_threads() -> int:
    """Worker cap from KERGPK_THREADS, defaulting to the CPU count"""
    return _int_env("KERGPK_THREADS", os.cpu_count() or 1)


def get_settings() -> Settings:
    """Read a fresh snapshot of the environment"""
    level = _float_env("KERGPK_LEVEL", DEFAULT_LEVEL)
    if not 0.0 < level < 1.0:
        raise ParameterError(f"KERGPK_LEVEL must lie in (0, 1), got {level}")

    return Settings(
        threads=get_threads(),
        seed=_int_env("KERGPK_SEED", DEFAULT_SEED, minimum=0),
        level=level,
        permutations=_int_env("KERGPK_PERMUTATIONS", DEFAULT_PERMUTATIONS),
        enumeration_cap=_int_env("KERGPK_ENUMERATION_CAP", DEFAULT_ENUMERATION_CAP),
        log_level=os.getenv("KERGPK_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(),
    )
