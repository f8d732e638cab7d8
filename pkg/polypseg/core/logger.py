import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Union

import orjson

from polypseg.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def get_logger(name: str, enable: bool = True) -> logging.Logger:
    """Create a stream logger with the project-wide format"""
    logger = logging.getLogger(name)
    if not logger.handlers and enable:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.setLevel(settings.LOG_LEVEL)
    return logger


class JsonlWriter:
    """Append-only JSON lines log"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: Dict[str, Any]) -> None:
        with open(self.path, "ab") as f:
            f.write(orjson.dumps(record, option=orjson.OPT_SERIALIZE_NUMPY))
            f.write(b"\n")


def read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def iter_jsonl(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    with open(path, "rb") as f:
        for line in f:
            if line.strip():
                yield orjson.loads(line)
