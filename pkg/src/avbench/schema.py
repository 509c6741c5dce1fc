"""Closed-vocabulary attribute schema used for stratification and tier rules.

The schema is a versioned JSON asset; unknown keys or values are rejected at
ingest rather than coerced, because downstream quota sampling needs a closed
vocabulary.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from avbench import assetutil


class SchemaViolation(ValueError):
    """An attribute map references a key or value outside the schema."""


@dataclass(frozen=True)
class AttributeSchema:
    version: int
    attributes: Dict[str, Tuple[str, ...]]

    @classmethod
    def load(cls, path: Optional[str] = None) -> "AttributeSchema":
        if path is None:
            raw = assetutil.load_json("attribute_schema.json")
        else:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        attrs = {k: tuple(v) for k, v in raw["attributes"].items()}
        return cls(version=int(raw.get("version", 1)), attributes=attrs)

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(self.attributes)

    def violations(self, attributes: Dict[str, str]) -> List[str]:
        errors = []
        for key, value in attributes.items():
            allowed = self.attributes.get(key)
            if allowed is None:
                errors.append(f"unknown attribute key: {key!r}")
            elif value not in allowed:
                errors.append(f"value {value!r} not in enumeration for key {key!r}")
        return errors

    def check(self, attributes: Dict[str, str]) -> None:
        errors = self.violations(attributes)
        if errors:
            raise SchemaViolation("; ".join(errors))


def load_hard_triggers(path: Optional[str] = None) -> Dict[str, Tuple[str, ...]]:
    """Tier trigger table: attribute key -> values that mark an entry hard."""
    if path is None:
        raw = assetutil.load_json("hard_triggers.json")
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: tuple(v) for k, v in raw.items()}
