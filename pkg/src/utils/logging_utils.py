# src/utils/logging_utils.py
import os
import logging
from logging.handlers import RotatingFileHandler

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s - %(message)s"


def _log_dir():
    default = os.path.join(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
        "logs",
    )
    return os.getenv("DARSE_LOG_DIR", default)


def _log_level():
    name = os.getenv("DARSE_LOG_LEVEL", "INFO").upper()
    return getattr(logging, name, logging.INFO)


def get_logger(name):
    logger = logging.getLogger(name)
    logger.setLevel(_log_level())

    if not logger.handlers:
        log_dir = _log_dir()
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, "darse.log")
        file_handler = RotatingFileHandler(
            log_file, maxBytes=5 * 1024 * 1024, backupCount=2
        )
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)

        # Colored formatter for console
        class ColoredFormatter(logging.Formatter):
            COLORS = {
                "DEBUG": "\033[36m",  # Cyan
                "INFO": "\033[32m",  # Green
                "WARNING": "\033[33m",  # Yellow
                "ERROR": "\033[31m",  # Red
                "CRITICAL": "\033[41m",  # Red background
                "RESET": "\033[0m",
            }

            def format(self, record):
                color = self.COLORS.get(record.levelname, "")
                reset = self.COLORS["RESET"] if color else ""
                msg = super().format(record)
                if color:
                    msg = f"{color}{msg}{reset}"
                return msg

        console_handler = logging.StreamHandler()
        console_handler.setFormatter(ColoredFormatter(LOG_FORMAT))
        logger.addHandler(console_handler)
        logger.propagate = False

    return logger
