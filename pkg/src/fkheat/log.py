"""Logging helpers: a SUCCESS level and the INFO/SUCCESS/WARNING/ERROR message types."""
from __future__ import annotations

import logging

SUCCESS = 25
logging.addLevelName(SUCCESS, "SUCCESS")

_LEVELS = {
    "INFO": logging.INFO,
    "SUCCESS": SUCCESS,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def handle_log(logger: logging.Logger, message: str, msg_type: str = "INFO") -> None:
    """로그 메시지를 타입에 맞는 레벨로 기록"""
    logger.log(_LEVELS.get(msg_type.upper(), logging.INFO), message)


def setup_logging(verbose: bool = False) -> None:
    """CLI 진입 시 한 번만 호출"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
