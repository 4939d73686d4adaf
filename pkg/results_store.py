"""
results_store.py - Module for storing and retrieving experiment outputs
"""

import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, Optional, Sequence

from pydantic import BaseModel

from errors import OutputExistsError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def get_result_path(out_dir: str, name: str, extension: str = "json") -> str:
    """Get the file path for an output based on its experiment name"""
    sanitized = name.lower().replace(" ", "_").replace("-", "_")
    return os.path.join(out_dir, f"{sanitized}.{extension}")


def ensure_writable(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise OutputExistsError(f"{path} already exists; pass --force to overwrite it")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json", by_alias=True)
    return payload


def save_json(path: str, payload: Any, force: bool = False) -> str:
    """
    Save a result document as JSON (never appends; overwrites only with force)

    Args:
        path: Destination file
        payload: A pydantic model (dumped with camelCase aliases) or plain data
        force: Whether an existing file may be replaced

    Returns:
        str: The path written
    """
    ensure_writable(path, force)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, ensure_ascii=False, indent=2)
    logger.info(f"Saved {path}")
    return path


def load_json(path: str) -> Optional[Dict[str, Any]]:
    """
    Retrieve a JSON document

    Args:
        path: File to read

    Returns:
        Optional[Dict[str, Any]]: The document if found, None otherwise
    """
    if not os.path.exists(path):
        logger.info(f"No result found at {path}")
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]], force: bool = False) -> str:
    ensure_writable(path, force)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.info(f"Saved {path} ({count} rows)")
    return path


def write_manifest(out_dir: str, manifest: BaseModel, force: bool = False) -> str:
    """Write the run manifest before any computation starts"""
    return save_json(os.path.join(out_dir, MANIFEST_NAME), manifest, force=force)


def finish_manifest(out_dir: str, manifest: BaseModel) -> str:
    """Rewrite the manifest of the current run once its outputs exist"""
    return save_json(os.path.join(out_dir, MANIFEST_NAME), manifest, force=True)
