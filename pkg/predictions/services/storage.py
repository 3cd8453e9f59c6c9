# predictions/services/storage.py
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd
from django.conf import settings

from ..utils import make_json_safe
from .schemas import RunManifest

CSV_FLOAT_FORMAT = "%.10g"


def output_root() -> Path:
    return Path(getattr(settings, "RIS_PREDICT_OUTPUT_DIR", "runs"))


def config_hash(config: Mapping[str, Any]) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON form of ``config``."""
    text = json.dumps(make_json_safe(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_dir(subcommand: str, digest: str, out: Optional[Union[str, Path]] = None) -> Path:
    """``out`` when given, else <output root>/<subcommand>-<hash prefix>; created if missing."""
    path = Path(out) if out else output_root() / f"{subcommand}-{digest[:12]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(rows: Iterable[Mapping[str, Any]], columns: Sequence[str], path: Union[str, Path]) -> Path:
    """
    Write rows with a fixed column order. Floats use 10 significant digits and
    line endings are always LF so reruns are byte-identical.
    """
    path = Path(path)
    df = pd.DataFrame(list(rows), columns=list(columns))
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def write_frame(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(doc: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(make_json_safe(doc), sort_keys=True, indent=2) + "\n")
    return path


def write_manifest(manifest: RunManifest, directory: Union[str, Path]) -> Path:
    return write_json(manifest.model_dump(), Path(directory) / "manifest.json")


def read_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return RunManifest.model_validate_json(path.read_text())


def list_outputs(directory: Union[str, Path]) -> List[str]:
    return sorted(p.name for p in Path(directory).iterdir() if p.suffix == ".csv")
