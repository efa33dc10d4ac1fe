import logging
from typing import Optional

#: Format shared by the console and file handlers.
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_ROOT = "pyFedFlow"


def get_logger(name: str) -> logging.Logger:
    """
    Return a logger under the package namespace.

    Library modules call this with ``__name__`` and never attach handlers;
    handlers are installed once by `configure_logging`.

    Examples
    --------
    >>> logger = get_logger(__name__)
    >>> logger.info("solver segment finished")
    """
    if name != _ROOT and not name.startswith(_ROOT + "."):
        name = f"{_ROOT}.{name}"
    return logging.getLogger(name)


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Install console (and optionally file) handlers on the package logger.

    Parameters
    ----------
    level : str, optional
        Logging level name, by default "INFO".
    log_file : str, optional
        Also append records to this file.

    Returns
    -------
    logging.Logger
        The package root logger.

    Raises
    ------
    ValueError
        If `level` is not a known logging level name.
    """
    if not isinstance(level, str) or not isinstance(logging.getLevelName(level.upper()), int):
        raise ValueError(f"`level` should be a logging level name, got {level!r}.")

    logger = logging.getLogger(_ROOT)
    logger.setLevel(level.upper())
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    logger.addHandler(console)
    if log_file is not None:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    logger.propagate = False
    return logger
