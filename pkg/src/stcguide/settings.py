import logging
import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class RuntimeSettings:
    def __init__(self, log_level: str | None = None, workers: int | None = None):
        self.log_level = (log_level or os.getenv("STCGUIDE_LOG_LEVEL", "INFO")).upper()
        self.workers = workers if workers is not None else _int_env("STCGUIDE_WORKERS", 1)

    def configure_logging(self) -> None:
        level = logging.getLevelName(self.log_level)
        if not isinstance(level, int):
            level = logging.INFO
        root = logging.getLogger("stcguide")
        root.setLevel(level)
        if not root.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logging.getLogger(__name__).warning("ignoring non-integer %s=%r", name, raw)
        return default
