import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

from toda_cft.core.errors import InputError

_project_root = Path(__file__).parent.parent.parent.parent
load_dotenv(_project_root / ".env")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _positive_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise InputError(f"{name} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise InputError(f"{name} must be positive, got {value}")
    return value


@dataclass(frozen=True)
class Settings:
    log_level: str
    workers: int
    chunk_size: int
    output_dir: Path

    @classmethod
    def from_env(cls) -> "Settings":
        log_level = os.environ.get("TODA_CFT_LOG_LEVEL", "INFO").strip().upper()
        if log_level not in LOG_LEVELS:
            raise InputError(f"TODA_CFT_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}")
        return cls(
            log_level=log_level,
            workers=_positive_int("TODA_CFT_WORKERS", 1),
            chunk_size=_positive_int("TODA_CFT_CHUNK_SIZE", 64),
            output_dir=Path(os.environ.get("TODA_CFT_OUTPUT_DIR", str(_project_root / "results"))),
        )
