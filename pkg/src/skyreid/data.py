"""Dataset directory parsing, attribute tables, and cross-platform splits.

A dataset root contains ``train/`` and ``test/`` directories of images named
``PID_CAM_SEQ.ext`` (CAM one of A, C, W) plus an ``attributes.csv`` mapping
each identity to its categorical soft labels. Parsing produces a training
split and, per evaluation direction, a query/gallery pair restricted to
identities photographed on both of the direction's platforms.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np
from PIL import Image

from .schema import AttributeSchema, SchemaError, load_schema
from .types import AttributeVector, CameraPlatform, ConfigurationError, ImageRecord, ParseError

RECORD_NAME_RE = re.compile(r"^(\d+)_([ACW])_(\d+)\.(png|jpg|jpeg)$")

# (height, width) every image is resized to on load
DEFAULT_IMAGE_SIZE = (256, 128)


class SplitRole(Enum):
    """Which role a group of records plays during training or evaluation."""

    TRAIN = "train"
    QUERY = "query"
    GALLERY = "gallery"


@dataclass(frozen=True)
class ProtocolSpec:
    """One cross-platform evaluation direction, e.g. aerial query to cctv gallery."""

    query_platform: CameraPlatform
    gallery_platform: CameraPlatform
    max_query_per_id: int = 6

    def __post_init__(self):
        if self.query_platform is self.gallery_platform:
            raise ConfigurationError(
                f"query and gallery platforms must differ, both are {self.query_platform.code}"
            )
        if self.max_query_per_id < 1:
            raise ConfigurationError(f"max_query_per_id must be >= 1, got {self.max_query_per_id}")

    @property
    def direction(self) -> str:
        return f"{self.query_platform.code}->{self.gallery_platform.code}"


DEFAULT_PROTOCOLS: tuple[ProtocolSpec, ...] = (
    ProtocolSpec(CameraPlatform.AERIAL, CameraPlatform.CCTV),
    ProtocolSpec(CameraPlatform.AERIAL, CameraPlatform.WEARABLE),
    ProtocolSpec(CameraPlatform.CCTV, CameraPlatform.AERIAL),
    ProtocolSpec(CameraPlatform.WEARABLE, CameraPlatform.AERIAL),
)


@dataclass(frozen=True)
class DatasetSplit:
    """A named collection of records plus the attribute vector of each identity."""

    role: SplitRole
    records: tuple[ImageRecord, ...]
    attributes: Mapping[int, AttributeVector]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        missing = {r.person_id for r in self.records} - set(self.attributes)
        if missing:
            raise ValueError(f"records reference identities without attributes: {sorted(missing)}")

    @property
    def identities(self) -> tuple[int, ...]:
        return tuple(sorted({r.person_id for r in self.records}))


class ProtocolSplits(NamedTuple):
    query: DatasetSplit
    gallery: DatasetSplit


@dataclass(frozen=True)
class ParsedDataset:
    """Everything parsed from one dataset root."""

    train: DatasetSplit
    protocols: dict[ProtocolSpec, ProtocolSplits]
    attributes: dict[int, AttributeVector]
    schema: AttributeSchema = field(repr=False)


def parse_record_name(name: str) -> tuple[int, CameraPlatform, int]:
    """Parse ``PID_CAM_SEQ.ext`` into (person_id, platform, sequence)."""
    match = RECORD_NAME_RE.match(name)
    if match is None:
        raise ParseError(
            f"{name!r} does not match the PID_CAM_SEQ.(png|jpg|jpeg) naming convention"
        )
    pid, cam, seq, _ = match.groups()
    return int(pid), CameraPlatform.from_code(cam), int(seq)


def load_attributes(path: str | Path, schema: AttributeSchema) -> dict[int, AttributeVector]:
    """Load a comma-separated attribute table into per-identity bit vectors.

    The header must carry ``person_id`` plus exactly the schema's label
    columns. Rows repeating an identity with identical labels are collapsed
    silently; disagreeing repeats are an error.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: attribute file is empty")
        expected = {"person_id", *schema.group_names}
        got = set(reader.fieldnames)
        if got != expected:
            missing, extra = sorted(expected - got), sorted(got - expected)
            detail = []
            if missing:
                detail.append(f"missing column(s) {missing}")
            if extra:
                detail.append(f"unknown column(s) {extra}")
            raise ParseError(f"{path}: {'; '.join(detail)}")

        table: dict[int, AttributeVector] = {}
        for row_no, row in enumerate(reader, start=2):
            try:
                pid = int(row["person_id"])
            except (TypeError, ValueError):
                raise ParseError(
                    f"{path} row {row_no}: invalid person_id {row.get('person_id')!r}"
                ) from None
            try:
                vec = AttributeVector.from_labels(row, schema)
            except SchemaError as exc:
                raise ParseError(f"{path} row {row_no}: {exc}") from None
            if pid in table:
                if table[pid] != vec:
                    raise ParseError(f"{path} row {row_no}: conflicting labels for identity {pid}")
                continue
            table[pid] = vec
    return table


def load_image(path: str | Path, image_size: tuple[int, int]) -> np.ndarray:
    """Decode an image, resize to (height, width), and scale to [0, 1] floats."""
    h, w = image_size
    with Image.open(path) as img:
        resized = img.convert("RGB").resize((w, h), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0


def _scan_split(
    split_dir: Path,
    image_size: tuple[int, int],
    load_pixels: bool,
) -> list[ImageRecord]:
    records = []
    for entry in sorted(split_dir.iterdir()):
        if entry.name.startswith("."):
            continue
        try:
            pid, platform, seq = parse_record_name(entry.name)
        except ParseError as exc:
            raise ParseError(f"{entry}: {exc}") from None
        pixels = load_image(entry, image_size) if load_pixels else None
        records.append(
            ImageRecord(
                person_id=pid,
                platform=platform,
                sequence=seq,
                pixel_data=pixels,
                source_path=str(entry),
            )
        )
    records.sort(key=lambda r: r.key)
    return records


def build_protocol_splits(
    records: list[ImageRecord],
    attributes: Mapping[int, AttributeVector],
    spec: ProtocolSpec,
) -> ProtocolSplits:
    """Assemble one direction's query and gallery from a pool of test records.

    Only identities with at least one image on each of the direction's two
    platforms take part. Each keeps at most ``max_query_per_id`` query images
    (lowest sequence numbers first) and contributes every gallery-platform
    image to the gallery.
    """
    by_pid: dict[int, dict[CameraPlatform, list[ImageRecord]]] = {}
    for rec in records:
        by_pid.setdefault(rec.person_id, {}).setdefault(rec.platform, []).append(rec)

    eligible = sorted(
        pid
        for pid, plats in by_pid.items()
        if spec.query_platform in plats and spec.gallery_platform in plats
    )
    if not eligible:
        raise ParseError(f"protocol {spec.direction}: no identity has images on both platforms")

    query_records: list[ImageRecord] = []
    gallery_records: list[ImageRecord] = []
    for pid in eligible:
        candidates = sorted(by_pid[pid][spec.query_platform], key=lambda r: r.sequence)
        query_records.extend(candidates[: spec.max_query_per_id])
        gallery_records.extend(sorted(by_pid[pid][spec.gallery_platform], key=lambda r: r.sequence))

    kept = {pid: attributes[pid] for pid in eligible}
    return ProtocolSplits(
        query=DatasetSplit(role=SplitRole.QUERY, records=tuple(query_records), attributes=kept),
        gallery=DatasetSplit(
            role=SplitRole.GALLERY, records=tuple(gallery_records), attributes=kept
        ),
    )


def parse_dataset(
    root: str | Path,
    mode: int | str = 88,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    load_pixels: bool = True,
    protocols: tuple[ProtocolSpec, ...] = DEFAULT_PROTOCOLS,
) -> ParsedDataset:
    """Parse a dataset root into a train split and per-direction test splits.

    ``mode`` selects the attribute schema the annotation table must follow.
    With ``load_pixels`` false, records carry no pixel data, which makes
    structure-only parsing cheap for very large trees.
    """
    root = Path(root)
    schema = load_schema(mode)

    attr_path = root / "attributes.csv"
    if not attr_path.is_file():
        raise ParseError(f"{root}: missing attributes.csv")
    attributes = load_attributes(attr_path, schema)

    splits: dict[str, list[ImageRecord]] = {}
    for split_name in ("train", "test"):
        split_dir = root / split_name
        if not split_dir.is_dir():
            raise ParseError(f"{root}: missing split directory {split_name}/")
        records = _scan_split(split_dir, image_size, load_pixels)
        if not records:
            raise ParseError(f"{root}: split {split_name} is empty")
        splits[split_name] = records

    train_pids = {r.person_id for r in splits["train"]}
    test_pids = {r.person_id for r in splits["test"]}
    overlap = train_pids & test_pids
    if overlap:
        raise ParseError(
            f"train and test identity sets must be disjoint; both contain {sorted(overlap)}"
        )
    missing = (train_pids | test_pids) - set(attributes)
    if missing:
        raise ParseError(f"no attribute row for identities {sorted(missing)}")

    train = DatasetSplit(
        role=SplitRole.TRAIN,
        records=tuple(splits["train"]),
        attributes={pid: attributes[pid] for pid in sorted(train_pids)},
    )
    protocol_splits = {
        spec: build_protocol_splits(splits["test"], attributes, spec) for spec in protocols
    }
    return ParsedDataset(
        train=train, protocols=protocol_splits, attributes=attributes, schema=schema
    )
