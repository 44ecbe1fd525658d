"""Cross-platform retrieval runs and result reporting.

A protocol run embeds one direction's query and gallery splits, materializes
the pairwise distance matrix, and reduces it to mAP and CMC scores. Reports
render any number of tagged runs as an aligned table with optional deltas
against a baseline tag, plus a per-attribute impact plot when such data
exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .backbone import distance_matrix as embedding_distances
from .data import DatasetSplit, ProtocolSpec, ProtocolSplits
from .metrics import evaluate_retrieval
from .types import CameraPlatform, ConfigurationError, ProtocolResult

PROTOCOL_RANKS = (1, 5, 10)


@dataclass(frozen=True)
class DistanceMatrix:
    """Query x gallery distances with the identity and platform of each row/column."""

    values: np.ndarray
    query_ids: tuple[int, ...]
    gallery_ids: tuple[int, ...]
    query_platforms: tuple[CameraPlatform, ...]
    gallery_platforms: tuple[CameraPlatform, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"distance matrix must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("distance matrix values must be finite")
        q, g = values.shape
        if (
            len(self.query_ids) != q
            or len(self.query_platforms) != q
            or len(self.gallery_ids) != g
            or len(self.gallery_platforms) != g
        ):
            raise ValueError(
                f"dimensions not consistent: {q}x{g} matrix with "
                f"{len(self.query_ids)}/{len(self.gallery_ids)} ids"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "query_ids", tuple(int(i) for i in self.query_ids))
        object.__setattr__(self, "gallery_ids", tuple(int(i) for i in self.gallery_ids))


def embed_split(model, split: DatasetSplit, batch_size: int = 64) -> torch.Tensor:
    """Embed every record in a split, in record order."""
    chunks = []
    records = split.records
    for start in range(0, len(records), batch_size):
        batch = records[start : start + batch_size]
        missing = [r.key for r in batch if r.pixel_data is None]
        if missing:
            raise ConfigurationError(
                f"records without pixel data cannot be embedded (e.g. {missing[0]}); "
                "parse the dataset with load_pixels=True"
            )
        stacked = np.stack([r.pixel_data for r in batch]).astype(np.float32)
        images = torch.from_numpy(stacked).permute(0, 3, 1, 2)
        with torch.no_grad():
            chunks.append(model.embed(images))
    return torch.cat(chunks, dim=0)


def build_distance_matrix(
    model, query: DatasetSplit, gallery: DatasetSplit, batch_size: int = 64
) -> DistanceMatrix:
    """Embed both splits and compute all pairwise embedding distances."""
    q = embed_split(model, query, batch_size)
    g = embed_split(model, gallery, batch_size)
    values = embedding_distances(q, g).numpy()
    return DistanceMatrix(
        values=values,
        query_ids=tuple(r.person_id for r in query.records),
        gallery_ids=tuple(r.person_id for r in gallery.records),
        query_platforms=tuple(r.platform for r in query.records),
        gallery_platforms=tuple(r.platform for r in gallery.records),
    )


def run_protocol(
    model,
    splits: ProtocolSplits | tuple[DatasetSplit, DatasetSplit],
    spec: ProtocolSpec,
    ranks: tuple[int, ...] = PROTOCOL_RANKS,
    batch_size: int = 64,
) -> ProtocolResult:
    """Evaluate one direction: embed, rank, and score.

    The model is put in eval mode for the duration (and restored), so results
    are deterministic for fixed weights.
    """
    query, gallery = splits
    for split, platform, side in (
        (query, spec.query_platform, "query"),
        (gallery, spec.gallery_platform, "gallery"),
    ):
        bad = {r.platform for r in split.records} - {platform}
        if bad:
            raise ConfigurationError(
                f"{side} split contains platform(s) {sorted(p.code for p in bad)} "
                f"but protocol {spec.direction} expects {platform.code}"
            )

    was_training = bool(getattr(model, "training", False))
    model.eval()
    try:
        dm = build_distance_matrix(model, query, gallery, batch_size)
    finally:
        if was_training:
            model.train()
    scores = evaluate_retrieval(
        dm.values,
        np.array(dm.query_ids),
        np.array(dm.gallery_ids),
        ranks=ranks,
    )
    return ProtocolResult(
        query_platform=spec.query_platform,
        gallery_platform=spec.gallery_platform,
        mAP=scores.mAP,
        cmc=scores.cmc,
        query_count=len(query.records),
        gallery_count=len(gallery.records),
    )


def run_all_protocols(
    model,
    parsed,
    ranks: tuple[int, ...] = PROTOCOL_RANKS,
    batch_size: int = 64,
) -> dict[ProtocolSpec, ProtocolResult]:
    """Run every direction in a parsed dataset, in its declared order."""
    return {
        spec: run_protocol(model, splits, spec, ranks=ranks, batch_size=batch_size)
        for spec, splits in parsed.protocols.items()
    }


@dataclass(frozen=True)
class Report:
    """Rendered evaluation report: text table, structured rows, written files."""

    text: str
    rows: list[dict]
    paths: dict[str, str] = field(default_factory=dict)


def _fmt_cell(value: float, delta: float | None) -> str:
    cell = f"{100 * value:.2f}"
    if delta is not None:
        cell += f" ({100 * delta:+.2f})"
    return cell


def emit_report(
    results: Mapping[str, Sequence[ProtocolResult]] | Sequence[ProtocolResult],
    out_dir: str | Path | None = None,
    baseline: str | None = None,
    attribute_impact: Mapping[str, float] | None = None,
) -> Report:
    """Render tagged protocol results as a table, JSON rows, and optional plot.

    Scores print as percentages. With ``baseline`` set, non-baseline rows get
    per-metric deltas in percentage points against the same direction's
    baseline row. ``attribute_impact`` (attribute name to score) adds a bar
    plot; when absent the table notes that the plot was skipped.
    """
    if not isinstance(results, Mapping):
        results = {"model": tuple(results)}
    if not results or not any(len(v) for v in results.values()):
        raise ConfigurationError("emit_report needs at least one protocol result")
    if baseline is not None and baseline not in results:
        raise ConfigurationError(
            f"baseline tag {baseline!r} not among result tags {sorted(results)}"
        )

    ranks = sorted({r for rs in results.values() for res in rs for r in res.cmc})
    base_by_direction: dict[str, ProtocolResult] = {}
    if baseline is not None:
        base_by_direction = {res.direction: res for res in results[baseline]}

    header = ["tag", "direction", "mAP", *(f"R{k}" for k in ranks), "queries", "gallery"]
    table_rows: list[list[str]] = []
    rows: list[dict] = []
    for tag, tagged in results.items():
        for res in tagged:
            base = base_by_direction.get(res.direction)
            use_delta = base is not None and tag != baseline
            d_map = res.mAP - base.mAP if use_delta else None
            cells = [tag, res.direction, _fmt_cell(res.mAP, d_map)]
            row = {
                "tag": tag,
                "direction": res.direction,
                "mAP": res.mAP,
                "query_count": res.query_count,
                "gallery_count": res.gallery_count,
                "delta_mAP": d_map,
            }
            for k in ranks:
                value = res.cmc.get(k)
                if value is None:
                    cells.append("-")
                    continue
                d_k = res.cmc[k] - base.cmc[k] if use_delta and k in base.cmc else None
                cells.append(_fmt_cell(value, d_k))
                row[f"rank{k}"] = value
                if d_k is not None:
                    row[f"delta_rank{k}"] = d_k
            cells += [str(res.query_count), str(res.gallery_count)]
            table_rows.append(cells)
            rows.append(row)

    widths = [max(len(h), *(len(r[i]) for r in table_rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(widths[i]) for i, c in enumerate(r)) for r in table_rows]

    paths: dict[str, str] = {}
    plot_wanted = bool(attribute_impact)
    if not plot_wanted:
        lines.append("")
        lines.append("attribute impact data absent; plot skipped")

    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table_path = out_dir / "report.txt"
        table_path.write_text(text)
        paths["table"] = str(table_path)
        json_path = out_dir / "results.json"
        json_path.write_text(json.dumps(rows, indent=2) + "\n")
        paths["results"] = str(json_path)
        if plot_wanted:
            paths["attribute_impact"] = _plot_attribute_impact(
                attribute_impact, out_dir / "attribute_impact.png"
            )
    return Report(text=text, rows=rows, paths=paths)


def _plot_attribute_impact(impact: Mapping[str, float], path: Path, top: int = 20) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    items = sorted(impact.items(), key=lambda kv: kv[1], reverse=True)[:top]
    names = [k for k, _ in items][::-1]
    scores = [v for _, v in items][::-1]
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.35 * len(items))))
    ax.barh(names, scores, color="#4472c4")
    ax.set_xlabel("contribution to pair distance")
    ax.set_title("attribute impact")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
