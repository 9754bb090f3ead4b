"""
Export Service
CSV tables with a '#'-prefixed JSON header and pydantic reports as JSON.
Float formatting is fixed so identical runs give identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from pydantic import BaseModel

from app.core.config import settings

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def output_dir(path: Optional[PathLike] = None) -> Path:
    directory = Path(path or settings.OUTPUT_DIR)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _header_lines(header: Optional[Dict[str, Any]]) -> str:
    if not header:
        return ""
    text = json.dumps(header, sort_keys=True, indent=1, default=str)
    return "".join(f"# {line}\n" for line in text.splitlines())


def write_table(frame: pd.DataFrame, path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(_header_lines(header))
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_header(path: PathLike) -> Dict[str, Any]:
    lines = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            lines.append(line[2:])
    return json.loads("".join(lines)) if lines else {}


def write_report(report: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {type(report).__name__} to {path}")
    return path


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def write_events(events: List[Any], path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    return write_json({"header": header or {}, "events": [e.to_dict() for e in events]}, path)
