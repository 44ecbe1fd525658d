"""Shared domain types and their invariants.

Everything here is immutable after construction and safe to share across
threads. Numeric payloads are numpy arrays with the writeable flag cleared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .schema import AttributeSchema, SchemaError


class ConfigurationError(ValueError):
    """A run or module configuration is invalid."""


class ParseError(ValueError):
    """A dataset file or record could not be parsed."""


class CameraPlatform(Enum):
    """The three capture platforms. Protocol directions are ordered pairs of distinct platforms."""

    AERIAL = "A"
    CCTV = "C"
    WEARABLE = "W"

    @property
    def code(self) -> str:
        return self.value

    @classmethod
    def from_code(cls, code: str) -> "CameraPlatform":
        try:
            return cls(code)
        except ValueError:
            raise ParseError(f"unknown camera code {code!r}; expected one of A, C, W") from None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One cropped person image with identity, platform and sequence index.

    ``pixel_data`` is H x W x 3 float with values in [0, 1] (clamped on
    construction), or None for records whose pixels have not been loaded.
    (person_id, platform, sequence) is unique within a split.
    """

    person_id: int
    platform: CameraPlatform
    sequence: int
    pixel_data: np.ndarray | None = None
    source_path: str | None = None

    def __post_init__(self):
        if self.person_id < 0 or self.sequence < 0:
            raise ValueError("person_id and sequence must be non-negative")
        if self.pixel_data is not None:
            px = np.asarray(self.pixel_data, dtype=np.float32)
            if px.ndim != 3 or px.shape[2] != 3:
                raise ValueError(f"pixel_data must be HxWx3, got shape {px.shape}")
            if px.shape[0] < 16 or px.shape[1] < 16:
                raise ValueError(f"ingested images must be at least 16x16, got {px.shape[:2]}")
            object.__setattr__(self, "pixel_data", _freeze(np.clip(px, 0.0, 1.0)))

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.person_id, self.platform.code, self.sequence)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageRecord):
            return NotImplemented
        if self.key != other.key or self.source_path != other.source_path:
            return False
        if (self.pixel_data is None) != (other.pixel_data is None):
            return False
        return self.pixel_data is None or np.array_equal(self.pixel_data, other.pixel_data)

    def to_dict(self, include_pixels: bool = True) -> dict:
        d = {
            "person_id": self.person_id,
            "platform": self.platform.code,
            "sequence": self.sequence,
            "source_path": self.source_path,
        }
        if include_pixels and self.pixel_data is not None:
            d["pixel_data"] = self.pixel_data.tolist()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImageRecord":
        px = d.get("pixel_data")
        return cls(
            person_id=int(d["person_id"]),
            platform=CameraPlatform.from_code(d["platform"]),
            sequence=int(d["sequence"]),
            pixel_data=None if px is None else np.asarray(px, dtype=np.float32),
            source_path=d.get("source_path"),
        )


@dataclass(frozen=True, eq=False)
class AttributeVector:
    """Binary attribute encoding of one identity under a given schema.

    Within each soft-label group exactly one bit is set. Length equals the
    schema's total bit count.
    """

    bits: np.ndarray
    schema: AttributeSchema

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise SchemaError(f"bits must be a vector, got shape {bits.shape}")
        if bits.shape[0] != self.schema.total_bits:
            raise SchemaError(
                f"attribute vector has {bits.shape[0]} bits, schema "
                f"{self.schema.name!r} expects {self.schema.total_bits}"
            )
        object.__setattr__(self, "bits", _freeze(bits))

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttributeVector):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.bits, other.bits)

    @property
    def group_index(self) -> dict[str, tuple[int, int]]:
        return self.schema.group_index

    def labels(self) -> dict[str, str]:
        return self.schema.decode(self.bits)

    def to_dict(self) -> dict:
        return {"bits": self.bits.tolist(), "schema": self.schema.name}

    @classmethod
    def from_labels(cls, labels: Mapping[str, str], schema: AttributeSchema) -> "AttributeVector":
        return cls(bits=schema.encode(labels), schema=schema)


def validate_attribute_vector(v: AttributeVector) -> bool:
    """True iff every soft-label group of ``v`` is exactly one-hot.

    Length mismatches against the schema are a configuration error rather
    than a validation failure (AttributeVector construction already rejects
    them, so this guards vectors built through other paths).
    """
    bits = np.asarray(v.bits)
    if bits.shape[0] != v.schema.total_bits:
        raise SchemaError(
            f"attribute vector has {bits.shape[0]} bits, schema expects {v.schema.total_bits}"
        )
    for g in v.schema.groups:
        if int(bits[g.start : g.stop].sum()) != 1:
            return False
    return True


@dataclass(frozen=True)
class AffineParams:
    """Scale and translation of a crop window in normalized [-1, 1] coordinates.

    The sampled window must lie within the padded source extent:
    |t| + s <= 1 + eps per axis after clamping.
    """

    s_x: float
    s_y: float
    t_x: float
    t_y: float

    _EPS = 1e-6

    def __post_init__(self):
        for s, t, axis in ((self.s_x, self.t_x, "x"), (self.s_y, self.t_y, "y")):
            if not (0.0 < s <= 1.0 + self._EPS):
                raise ValueError(f"s_{axis}={s} outside (0, 1]")
            if abs(t) > 1.0 + self._EPS:
                raise ValueError(f"t_{axis}={t} outside [-1, 1]")
            if abs(t) + s > 1.0 + 1e-4:
                raise ValueError(f"crop window leaves the source: |t_{axis}| + s_{axis} = {abs(t) + s:.4f} > 1")

    def to_dict(self) -> dict:
        return {"s_x": self.s_x, "s_y": self.s_y, "t_x": self.t_x, "t_y": self.t_y}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AffineParams":
        return cls(s_x=float(d["s_x"]), s_y=float(d["s_y"]), t_x=float(d["t_x"]), t_y=float(d["t_y"]))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """C x h x w stack of backbone activations."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"feature map must be CxHxW with positive dims, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("feature map has non-finite entries")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    def to_dict(self) -> dict:
        return {"data": self.data.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureMap":
        return cls(data=np.asarray(d["data"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Pooled embedding. If flagged normalized, its L2 norm is 1 within 1e-6."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if data.size == 0 or not np.isfinite(data).all():
            raise ValueError("feature vector must be non-empty and finite")
        if self.normalized and abs(np.linalg.norm(data) - 1.0) > 1e-6:
            raise ValueError(f"normalized vector has norm {np.linalg.norm(data):.8f}")
        object.__setattr__(self, "data", _freeze(data))

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.normalized == other.normalized and np.array_equal(self.data, other.data)

    def to_dict(self) -> dict:
        return {"data": self.data.tolist(), "normalized": self.normalized}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureVector":
        return cls(data=np.asarray(d["data"], dtype=np.float64), normalized=bool(d["normalized"]))


@dataclass(frozen=True, eq=False)
class DistanceDecomposition:
    """A pairwise distance split into per-attribute contributions.

    ``reconstructed`` is by construction the exact floating sum of
    ``per_attribute``; ``total`` is the embedding-space distance it
    approximates.
    """

    total: float
    per_attribute: np.ndarray
    reconstructed: float

    def __post_init__(self):
        per = np.asarray(self.per_attribute, dtype=np.float64)
        if per.ndim != 1 or per.size == 0:
            raise ValueError("per_attribute must be a non-empty vector")
        if (per < 0).any() or self.total < 0:
            raise ValueError("distances must be non-negative")
        s = float(per.sum())
        scale = max(abs(s), 1e-12)
        if abs(self.reconstructed - s) > 1e-6 * scale:
            raise ValueError(
                f"reconstructed={self.reconstructed!r} does not equal the sum of "
                f"per-attribute distances ({s!r})"
            )
        object.__setattr__(self, "per_attribute", _freeze(per))

    @classmethod
    def from_parts(cls, total: float, per_attribute: np.ndarray) -> "DistanceDecomposition":
        per = np.asarray(per_attribute, dtype=np.float64)
        return cls(total=float(total), per_attribute=per, reconstructed=float(per.sum()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DistanceDecomposition):
            return NotImplemented
        return (
            self.total == other.total
            and self.reconstructed == other.reconstructed
            and np.array_equal(self.per_attribute, other.per_attribute)
        )

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "per_attribute": self.per_attribute.tolist(),
            "reconstructed": self.reconstructed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistanceDecomposition":
        return cls(
            total=float(d["total"]),
            per_attribute=np.asarray(d["per_attribute"], dtype=np.float64),
            reconstructed=float(d["reconstructed"]),
        )


@dataclass(frozen=True)
class ProtocolResult:
    """mAP and CMC rank-k scores for one query-platform to gallery-platform direction."""

    query_platform: CameraPlatform
    gallery_platform: CameraPlatform
    mAP: float
    cmc: Mapping[int, float]
    query_count: int
    gallery_count: int

    def __post_init__(self):
        object.__setattr__(self, "cmc", dict(self.cmc))
        if not 0.0 <= self.mAP <= 1.0:
            raise ValueError(f"mAP={self.mAP} outside [0, 1]")
        ranks = sorted(self.cmc)
        vals = [self.cmc[r] for r in ranks]
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("CMC values must lie in [0, 1]")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("CMC must be non-decreasing in rank")

    @property
    def direction(self) -> str:
        return f"{self.query_platform.code}->{self.gallery_platform.code}"

    def to_dict(self) -> dict:
        return {
            "query_platform": self.query_platform.code,
            "gallery_platform": self.gallery_platform.code,
            "mAP": self.mAP,
            "cmc": {str(k): v for k, v in self.cmc.items()},
            "query_count": self.query_count,
            "gallery_count": self.gallery_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolResult":
        return cls(
            query_platform=CameraPlatform.from_code(d["query_platform"]),
            gallery_platform=CameraPlatform.from_code(d["gallery_platform"]),
            mAP=float(d["mAP"]),
            cmc={int(k): float(v) for k, v in d["cmc"].items()},
            query_count=int(d["query_count"]),
            gallery_count=int(d["gallery_count"]),
        )
