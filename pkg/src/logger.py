import logging
import os
from logging.handlers import RotatingFileHandler
import colorlog


_CONSOLE_TAG = "_toolkit_console"
_FILE_TAG = "_toolkit_file"


def setup_logging(log_level: str = "INFO", log_to_file: bool = False,
                  log_file_path: str = "./logs/toolkit.log"):
    log_format = '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, log_level.upper()))

    # repeated CLI invocations in one process must not stack handlers
    for handler in list(root_logger.handlers):
        if getattr(handler, _CONSOLE_TAG, False) or getattr(handler, _FILE_TAG, False):
            root_logger.removeHandler(handler)
            handler.close()

    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(
        log_format,
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        }
    ))
    setattr(handler, _CONSOLE_TAG, True)
    root_logger.addHandler(handler)

    if log_to_file:
        log_dir = os.path.dirname(log_file_path)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file_path,
            maxBytes=10*1024*1024,
            backupCount=5,
            encoding='utf-8'
        )
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        file_handler.setFormatter(file_formatter)
        setattr(file_handler, _FILE_TAG, True)
        root_logger.addHandler(file_handler)

    logging.getLogger('scipy').setLevel(logging.WARNING)

    return root_logger
