"""
Centralized logging configuration for the application.
"""
import logging
import sys
from pathlib import Path


def setup_logging(level: str = "INFO", log_dir: Path | None = None) -> None:
    """
    Configures the root logger to split logs into different files.
    - app.log: Contains records at `level` and above
    - error.log: Contains ONLY ERROR, CRITICAL
    - console: Contains records at `level` and above
    """
    log_format = "%(asctime)s - [%(levelname)s] - %(name)s: %(message)s"
    formatter = logging.Formatter(log_format, datefmt="%Y-%m-%d %H:%M:%S")
    numeric_level = logging.getLevelName(level.upper())
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO

    logger = logging.getLogger()
    logger.setLevel(numeric_level)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(formatter)
    handlers: list[logging.Handler] = [console_handler]

    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)

        app_log_handler = logging.FileHandler(log_dir / "app.log")
        app_log_handler.setLevel(numeric_level)
        app_log_handler.setFormatter(formatter)

        error_log_handler = logging.FileHandler(log_dir / "error.log")
        error_log_handler.setLevel(logging.ERROR)
        error_log_handler.setFormatter(formatter)
        handlers += [app_log_handler, error_log_handler]

    logger.handlers = handlers

    logging.getLogger("numba").setLevel(logging.WARNING)

    logger.debug("Logging configured (split-file setup).")
