"""Soft-biometric attribute schemas.

A schema declares the categorical soft labels annotated per identity and
how each label one-hot encodes into a contiguous bit range of the binary
attribute vector. Three bit widths are bundled with the package (28, 38
and 88); custom schema files use the same YAML layout.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

BUILTIN_MODES = {28: "attributes_28.yaml", 38: "attributes_38.yaml", 88: "attributes_88.yaml"}


class SchemaError(ValueError):
    """An attribute schema, or data checked against one, is inconsistent."""


@dataclass(frozen=True)
class AttributeGroup:
    """One categorical soft label and the bit range its one-hot code occupies."""

    name: str
    categories: tuple[str, ...]
    start: int

    @property
    def stop(self) -> int:
        return self.start + len(self.categories)

    @property
    def size(self) -> int:
        return len(self.categories)

    def bit_of(self, category: str) -> int:
        try:
            return self.start + self.categories.index(category)
        except ValueError:
            raise SchemaError(
                f"unknown category {category!r} for label {self.name!r}; "
                f"expected one of {list(self.categories)}"
            ) from None


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered collection of attribute groups covering bits [0, total_bits)."""

    name: str
    version: int
    groups: tuple[AttributeGroup, ...]

    def __post_init__(self):
        offset = 0
        seen: set[str] = set()
        for g in self.groups:
            if g.name in seen:
                raise SchemaError(f"duplicate group name {g.name!r}")
            seen.add(g.name)
            if g.size < 2:
                raise SchemaError(f"group {g.name!r} needs at least two categories")
            if len(set(g.categories)) != g.size:
                raise SchemaError(f"group {g.name!r} has duplicate categories")
            if g.start != offset:
                raise SchemaError(f"group {g.name!r} starts at bit {g.start}, expected {offset}")
            offset += g.size

    @property
    def total_bits(self) -> int:
        return self.groups[-1].stop if self.groups else 0

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    @property
    def group_index(self) -> dict[str, tuple[int, int]]:
        """Label name to half-open (start, stop) bit range."""
        return {g.name: (g.start, g.stop) for g in self.groups}

    def group(self, name: str) -> AttributeGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise SchemaError(f"unknown label {name!r}")

    def group_of_bit(self, bit: int) -> AttributeGroup:
        for g in self.groups:
            if g.start <= bit < g.stop:
                return g
        raise SchemaError(f"bit {bit} outside [0, {self.total_bits})")

    def bit_name(self, bit: int) -> str:
        g = self.group_of_bit(bit)
        return f"{g.name}={g.categories[bit - g.start]}"

    def encode(self, labels: Mapping[str, str]) -> np.ndarray:
        """One-hot encode a full row of label -> category into a bit vector."""
        missing = set(self.group_names) - set(labels)
        if missing:
            raise SchemaError(f"missing labels: {sorted(missing)}")
        bits = np.zeros(self.total_bits, dtype=np.uint8)
        for g in self.groups:
            bits[g.bit_of(labels[g.name])] = 1
        return bits

    def decode(self, bits: np.ndarray) -> dict[str, str]:
        """Invert :meth:`encode`. Requires exactly one set bit per group."""
        bits = np.asarray(bits)
        if bits.shape != (self.total_bits,):
            raise SchemaError(f"expected {self.total_bits} bits, got shape {bits.shape}")
        out = {}
        for g in self.groups:
            hot = np.flatnonzero(bits[g.start : g.stop])
            if hot.size != 1:
                raise SchemaError(f"group {g.name!r} is not one-hot ({hot.size} bits set)")
            out[g.name] = g.categories[int(hot[0])]
        return out


def _parse_schema(doc: dict, source: str) -> AttributeSchema:
    try:
        version = int(doc["schema_version"])
        name = str(doc["name"])
        raw_groups = doc["groups"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema file {source}: {exc}") from exc
    groups = []
    offset = 0
    for entry in raw_groups:
        cats = tuple(str(c) for c in entry["categories"])
        groups.append(AttributeGroup(name=str(entry["name"]), categories=cats, start=offset))
        offset += len(cats)
    return AttributeSchema(name=name, version=version, groups=tuple(groups))


def load_schema(mode: int | str | Path) -> AttributeSchema:
    """Load a bundled schema by bit width (28, 38, 88) or a schema file by path."""
    if isinstance(mode, int):
        if mode not in BUILTIN_MODES:
            raise SchemaError(f"no bundled schema with {mode} bits; choose from {sorted(BUILTIN_MODES)}")
        ref = importlib.resources.files("skyreid.schemas") / BUILTIN_MODES[mode]
        schema = _parse_schema(yaml.safe_load(ref.read_text()), BUILTIN_MODES[mode])
        if schema.total_bits != mode:
            raise SchemaError(f"bundled schema {BUILTIN_MODES[mode]} sums to {schema.total_bits} bits, expected {mode}")
        return schema
    path = Path(mode)
    return _parse_schema(yaml.safe_load(path.read_text()), str(path))
