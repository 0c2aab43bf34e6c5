import sys
from typing import Literal

from loguru import logger as log

_configured = False


def configure_logging(
    *,
    verbose: bool = False,
    log_file: str | None = None,
    level: Literal["DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"] = "INFO",
) -> None:
    """配置 loguru 输出(只生效一次)

    Args:
        verbose: 是否输出到控制台
        log_file: 日志文件路径, None 表示不写文件
        level: 日志级别
    """
    global _configured
    if _configured:
        return
    _configured = True
    log.remove()

    if verbose:
        log.add(
            sys.stderr,
            level=level,
            colorize=True,
            format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | {message}",
        )

    if log_file:
        log.add(
            log_file,
            rotation="10 MB",
            enqueue=True,
            level=level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
        )
