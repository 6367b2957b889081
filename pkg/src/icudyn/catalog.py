"""Variable catalog: raw EMR names -> canonical rows, with affine unit conversion."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import CatalogError, DataValidationError
from .events import as_frame

log = logging.getLogger(__name__)

CATALOG_HEADER = ["raw_name", "canonical_name", "kind", "unit_scale", "unit_offset"]


class VariableKind(enum.Enum):
    PHYSIOLOGIC = "physiologic"
    LAB = "lab"
    DRUG = "drug"
    INTERVENTION = "intervention"

    @property
    def binarized(self) -> bool:
        return self in (VariableKind.DRUG, VariableKind.INTERVENTION)


@dataclass(frozen=True)
class CatalogEntry:
    canonical: str
    kind: VariableKind
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class VariableCatalog:
    """Immutable mapping from raw names to canonical variables.

    ``canonical`` fixes the row order of every matrix built with this catalog.
    """

    entries: Mapping[str, CatalogEntry]
    canonical: tuple[str, ...]
    kinds: Mapping[str, VariableKind] = field(init=False)

    def __post_init__(self):
        kinds: dict[str, VariableKind] = {}
        for raw, entry in self.entries.items():
            if entry.scale == 0 or not math.isfinite(entry.scale):
                raise CatalogError(f"raw name {raw!r}: unit_scale must be finite and nonzero")
            prev = kinds.setdefault(entry.canonical, entry.kind)
            if prev is not entry.kind:
                raise CatalogError(
                    f"canonical {entry.canonical!r} declared as both {prev.value} and {entry.kind.value}"
                )
        if sorted(kinds) != sorted(self.canonical) or len(set(self.canonical)) != len(self.canonical):
            raise CatalogError("canonical list must name each canonical variable exactly once")
        object.__setattr__(self, "kinds", {name: kinds[name] for name in self.canonical})

    def __len__(self):
        return len(self.canonical)

    @property
    def row_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.canonical)}

    def kind(self, canonical: str) -> VariableKind:
        return self.kinds[canonical]

    def binarized_mask(self) -> np.ndarray:
        return np.array([self.kinds[v].binarized for v in self.canonical], dtype=bool)

    def aliases(self, canonical: str) -> list[str]:
        return [raw for raw, e in self.entries.items() if e.canonical == canonical]

    def with_self_aliases(self) -> "VariableCatalog":
        """Copy in which every canonical name is also an identity raw alias."""
        entries = dict(self.entries)
        for name in self.canonical:
            entries.setdefault(name, CatalogEntry(name, self.kinds[name]))
        return VariableCatalog(entries, self.canonical)


def _parse_float(text: str, default: float, lineno: int, column: str) -> float:
    text = text.strip()
    if not text:
        return default
    try:
        return float(text)
    except ValueError:
        raise CatalogError(f"line {lineno}: {column} is not a number: {text!r}") from None


def parse_catalog(lines) -> VariableCatalog:
    reader = csv.reader(lines)
    entries: dict[str, CatalogEntry] = {}
    canonical: list[str] = []
    header = None
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if header is None:
            header = [c.strip() for c in row]
            if header != CATALOG_HEADER:
                raise CatalogError(f"line {lineno}: expected header {','.join(CATALOG_HEADER)}")
            continue
        if len(row) != len(CATALOG_HEADER):
            raise CatalogError(f"line {lineno}: expected {len(CATALOG_HEADER)} fields, got {len(row)}")
        raw, canon, kind_text = (c.strip() for c in row[:3])
        if not raw or not canon:
            raise CatalogError(f"line {lineno}: raw_name and canonical_name are required")
        try:
            kind = VariableKind(kind_text.lower())
        except ValueError:
            raise CatalogError(f"line {lineno}: unknown kind {kind_text!r}") from None
        scale = _parse_float(row[3], 1.0, lineno, "unit_scale")
        offset = _parse_float(row[4], 0.0, lineno, "unit_offset")
        if scale == 0:
            raise CatalogError(f"line {lineno}: unit_scale must be nonzero")
        if raw in entries:
            raise CatalogError(f"line {lineno}: duplicate raw name {raw!r}")
        for other in entries.values():
            if other.canonical == canon and other.kind is not kind:
                raise CatalogError(
                    f"line {lineno}: canonical {canon!r} already has kind {other.kind.value}"
                )
        entries[raw] = CatalogEntry(canon, kind, scale, offset)
        if canon not in canonical:
            canonical.append(canon)
    return VariableCatalog(entries, tuple(canonical))


def load_catalog(path) -> VariableCatalog:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_catalog(fh)


def demo_catalog_path() -> Path:
    return Path(str(resources.files("icudyn") / "data" / "demo_catalog.csv"))


def load_demo_catalog() -> VariableCatalog:
    return load_catalog(demo_catalog_path())


def aggregate(events, catalog: VariableCatalog, unknown: str = "drop") -> pd.DataFrame:
    """Rename raw variables to canonical ones and convert units.

    Events are stably sorted by time within each encounter first, so rows
    sharing a timestamp keep their input order.
    """
    if unknown not in ("drop", "error"):
        raise ValueError(f"unknown policy must be 'drop' or 'error', got {unknown!r}")
    events = as_frame(events)
    if len(events) == 0:
        return events.copy()
    events = events.sort_values(["encounter_id", "t"], kind="stable")
    raw = events["variable"]
    known = raw.isin(catalog.entries.keys())
    n_unknown = int((~known).sum())
    if n_unknown:
        if unknown == "error":
            names = sorted(set(raw[~known]))
            raise DataValidationError(f"{n_unknown} events with unknown variables: {', '.join(names[:5])}")
        log.info("dropped %d events with variables not in the catalog", n_unknown)
        events = events[known]
    raw = events["variable"]
    canon = raw.map({k: e.canonical for k, e in catalog.entries.items()})
    scale = raw.map({k: e.scale for k, e in catalog.entries.items()}).to_numpy(dtype=float)
    offset = raw.map({k: e.offset for k, e in catalog.entries.items()}).to_numpy(dtype=float)
    out = events.copy()
    out["variable"] = canon.to_numpy()
    out["value"] = events["value"].to_numpy(dtype=float) * scale + offset
    return out.reset_index(drop=True)
