import csv
import enum
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np
from ruamel.yaml import YAML

from app.core.config import settings
from app.core.exceptions import ArtifactError

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars, enums, tuples and non-finite floats for JSON output."""
    if isinstance(value, enum.Enum):
        return to_jsonable(value.value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def format_float(value: Any) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), settings.FLOAT_FORMAT)


class ArtifactStore:
    """Deterministic writers and readers rooted at one output directory."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, relative: str) -> Path:
        return self.root / relative

    def _prepare(self, relative: str) -> Path:
        target = self.path(relative)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_text(self, relative: str, text: str) -> str:
        self._prepare(relative).write_text(text, encoding="utf-8")
        logger.debug(f"Wrote {relative}")
        return relative

    def write_json(self, relative: str, payload: Any) -> str:
        """Write JSON with sorted keys; inf/nan become strings."""
        text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
        return self.write_text(relative, text + "\n")

    def write_csv(self, relative: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        """Write a header row then numeric rows with every float in FLOAT_FORMAT."""
        target = self._prepare(relative)
        with target.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(v) for v in row])
        logger.debug(f"Wrote {relative}")
        return relative

    def write_yaml(self, relative: str, data: Any) -> str:
        yaml = YAML(typ="safe", pure=True)
        yaml.default_flow_style = False
        target = self._prepare(relative)
        with target.open("w", encoding="utf-8") as handle:
            yaml.dump(to_jsonable(data), handle)
        return relative

    def exists(self, relative: str) -> bool:
        return self.path(relative).is_file()

    def read_text(self, relative: str) -> str:
        target = self.path(relative)
        if not target.is_file():
            raise ArtifactError("Missing artifact", [relative])
        return target.read_text(encoding="utf-8")

    def read_json(self, relative: str) -> Any:
        """
        Load a JSON artifact.

        Raises:
            ArtifactError: If the file is missing or not valid JSON
        """
        text = self.read_text(relative)
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ArtifactError(f"Corrupt artifact ({e.msg})", [relative])

    def read_csv(self, relative: str) -> List[List[str]]:
        text = self.read_text(relative)
        return list(csv.reader(text.splitlines()))

    def inventory(self) -> List[str]:
        """Relative paths of every file under the root, sorted."""
        if not self.root.is_dir():
            return []
        return sorted(
            p.relative_to(self.root).as_posix() for p in self.root.rglob("*") if p.is_file()
        )
