"""Synthetic person-sprite fixture generator.

Renders small flat-shaded person sprites whose appearance is fully determined by a
set of categorical soft labels, then degrades each sprite into three camera
views (aerial, cctv, wearable) and writes a directory tree that the dataset
loader can parse. Every byte of the output is a deterministic function of the
seed, so fixtures can be regenerated instead of checked in.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .schema import AttributeSchema, load_schema
from .types import CameraPlatform

CANVAS_SHAPE = (96, 48)

# Output (height, width) per camera view. Aerial is squashed vertically to
# mimic a top-down perspective; wearable keeps the full canvas resolution.
PLATFORM_SIZES: dict[CameraPlatform, tuple[int, int]] = {
    CameraPlatform.AERIAL: (32, 24),
    CameraPlatform.CCTV: (64, 32),
    CameraPlatform.WEARABLE: (96, 48),
}

# blur sigma, brightness factor, additive noise sigma
_PLATFORM_DEGRADATION: dict[CameraPlatform, tuple[float, float, float]] = {
    CameraPlatform.AERIAL: (0.6, 0.72, 0.02),
    CameraPlatform.CCTV: (0.4, 0.90, 0.012),
    CameraPlatform.WEARABLE: (0.0, 1.0, 0.006),
}

# Label groups used for controlled pairs, chosen for large pixel footprints.
CONTROL_GROUPS = ("upper_clothing", "lower_clothing", "hair_color", "feet")

_CLOTH_COLORS = {
    "black": (0.05, 0.05, 0.05),
    "white": (0.95, 0.95, 0.95),
    "red": (0.85, 0.10, 0.10),
    "blue": (0.10, 0.20, 0.85),
    "green": (0.10, 0.70, 0.20),
    "yellow": (0.90, 0.85, 0.10),
    "gray": (0.50, 0.50, 0.50),
    "brown": (0.55, 0.35, 0.15),
    "other": (0.70, 0.30, 0.70),
}

_HAIR_COLORS = {
    "black": (0.08, 0.06, 0.05),
    "brown": (0.45, 0.30, 0.15),
    "blond": (0.85, 0.75, 0.40),
    "gray": (0.65, 0.65, 0.65),
    "other": (0.80, 0.40, 0.10),
}

_SKIN_TONES = {
    "group_1": (0.95, 0.80, 0.70),
    "group_2": (0.80, 0.60, 0.45),
    "group_3": (0.60, 0.42, 0.30),
    "group_4": (0.40, 0.28, 0.20),
}

_AGE_SKIN_FACTOR = {"young": 1.08, "adult": 1.0, "middle_aged": 0.92, "senior": 0.84}
_HEIGHT_SCALE = {"short": 0.82, "average": 0.92, "tall": 1.0}
_VOLUME_SCALE = {"slim": 0.80, "average": 1.0, "heavy": 1.25}
_GENDER_SCALE = {"male": 1.0, "female": 0.85}
_FEET_HEIGHT = {"shoes": 4, "sandals": 2, "boots": 8}
_FEET_SHADE = {
    "dark": (0.12, 0.10, 0.10),
    "light": (0.85, 0.82, 0.78),
    "colored": (0.75, 0.20, 0.25),
}

_ACCESSORY_COLORS = {
    "backpack": (0.90, 0.45, 0.00),
    "shoulder_bag": (0.00, 0.80, 0.80),
    "handbag": (0.95, 0.60, 0.80),
    "umbrella": (0.50, 0.00, 0.90),
    "suitcase": (0.30, 0.90, 0.50),
    "box": (0.80, 0.80, 0.30),
    "bicycle": (0.20, 0.40, 0.60),
    "phone": (0.90, 0.10, 0.50),
    "other": (0.40, 0.25, 0.55),
}

_HAT_COLOR = (0.20, 0.20, 0.75)
_HOOD_COLOR = (0.35, 0.30, 0.32)
_EYEGLASS_COLOR = (0.15, 0.15, 0.18)
_SUNGLASS_COLOR = (0.02, 0.02, 0.02)


def _pick(table: dict[str, tuple[float, float, float]], key: str, label: str) -> np.ndarray:
    try:
        return np.array(table[key], dtype=np.float64)
    except KeyError:
        raise ValueError(f"unknown {label} category {key!r}") from None


def _split_compound(category: str, label: str) -> tuple[str, str]:
    """Split a 'prefix_suffix' category like 'long_red' or 'shoes_dark'."""
    prefix, _, suffix = category.partition("_")
    if not suffix:
        raise ValueError(f"unknown {label} category {category!r}")
    return prefix, suffix


def render_identity(labels: dict[str, str]) -> np.ndarray:
    """Render one person sprite as a (96, 48, 3) float array in [0, 1].

    The output depends only on ``labels``: every categorical label moves at
    least a handful of pixels, which is what lets attribute-driven distances
    learned on these fixtures line up with label differences.
    """
    h, w = CANVAS_SHAPE
    canvas = np.empty((h, w, 3), dtype=np.float64)
    canvas[:] = (0.90 + 0.04 * np.linspace(0.0, 1.0, h))[:, None, None]

    skin = _pick(_SKIN_TONES, labels["ethnicity"], "ethnicity")
    try:
        skin = np.clip(skin * _AGE_SKIN_FACTOR[labels["age"]], 0.0, 0.99)
        fig_h = round(88 * _HEIGHT_SCALE[labels["height"]])
        torso_hw = int(
            np.clip(
                round(9 * _GENDER_SCALE[labels["gender"]] * _VOLUME_SCALE[labels["body_volume"]]),
                5,
                14,
            )
        )
    except KeyError as exc:
        raise ValueError(f"unknown category {exc.args[0]!r}") from None

    hair = _pick(_HAIR_COLORS, labels["hair_color"], "hair_color")
    cx = w // 2
    bottom = 94
    t0 = bottom - fig_h
    head_h = round(0.20 * fig_h)
    torso_h = round(0.38 * fig_h)
    feet_h = _FEET_HEIGHT.get(_split_compound(labels["feet"], "feet")[0])
    if feet_h is None:
        raise ValueError(f"unknown feet category {labels['feet']!r}")

    hr0, hr1 = t0, t0 + head_h
    tr0, tr1 = hr1, hr1 + torso_h
    lr0, lr1 = tr1, bottom - feet_h
    hc0, hc1 = cx - 5, cx + 6

    # head: skin, then hair / facial features layered on top
    canvas[hr0:hr1, hc0:hc1] = skin

    hairstyle = labels["hairstyle"]
    if hairstyle == "short":
        canvas[hr0 : hr0 + round(0.30 * head_h), hc0:hc1] = hair
    elif hairstyle == "medium":
        canvas[hr0 : hr0 + round(0.45 * head_h), hc0:hc1] = hair
    elif hairstyle == "long":
        canvas[hr0 : hr0 + round(0.45 * head_h), hc0:hc1] = hair
        canvas[hr1 : hr1 + head_h, hc0 : hc0 + 2] = hair
        canvas[hr1 : hr1 + head_h, hc1 - 2 : hc1] = hair
    elif hairstyle != "bald":
        raise ValueError(f"unknown hairstyle category {hairstyle!r}")

    eye_row = hr0 + round(0.55 * head_h)
    glasses = labels["glasses"]
    if glasses == "eyeglasses":
        canvas[eye_row, hc0 + 1 : hc1 - 1] = _EYEGLASS_COLOR
    elif glasses == "sunglasses":
        canvas[eye_row : eye_row + 2, hc0 + 1 : hc1 - 1] = _SUNGLASS_COLOR
    elif glasses != "none":
        raise ValueError(f"unknown glasses category {glasses!r}")

    if labels["moustache"] == "moustache":
        canvas[hr1 - round(0.25 * head_h), hc0 + 3 : hc1 - 3] = hair * 0.6
    elif labels["moustache"] != "none":
        raise ValueError(f"unknown moustache category {labels['moustache']!r}")
    if labels["beard"] == "beard":
        canvas[hr1 - round(0.18 * head_h) : hr1, hc0 + 1 : hc1 - 1] = hair * 0.5
    elif labels["beard"] != "none":
        raise ValueError(f"unknown beard category {labels['beard']!r}")

    accessories_head = labels["head_accessories"]
    if accessories_head == "hat":
        canvas[max(hr0 - 3, 0) : hr0 + 1, hc0 - 1 : hc1 + 1] = _HAT_COLOR
    elif accessories_head == "hood":
        canvas[max(hr0 - 2, 0) : hr0 + 2, hc0 - 2 : hc1 + 2] = _HOOD_COLOR
        canvas[hr0:hr1, hc0 - 2 : hc0] = _HOOD_COLOR
        canvas[hr0:hr1, hc1 : hc1 + 2] = _HOOD_COLOR
    elif accessories_head != "none":
        raise ValueError(f"unknown head_accessories category {accessories_head!r}")

    # torso core plus arms; short sleeves leave the lower arm skin-colored
    length, color_name = _split_compound(labels["upper_clothing"], "upper_clothing")
    if length not in ("short", "long"):
        raise ValueError(f"unknown upper_clothing category {labels['upper_clothing']!r}")
    upper = _pick(_CLOTH_COLORS, color_name, "upper_clothing")
    canvas[tr0:tr1, cx - torso_hw : cx + torso_hw + 1] = upper
    arm_l = slice(cx - torso_hw - 3, cx - torso_hw)
    arm_r = slice(cx + torso_hw + 1, cx + torso_hw + 4)
    sleeve_end = tr0 + (torso_h if length == "long" else round(0.40 * torso_h))
    for arm in (arm_l, arm_r):
        canvas[tr0:sleeve_end, arm] = upper
        canvas[sleeve_end:tr1, arm] = skin

    accessory = labels["accessories"]
    if accessory != "none":
        patch = _pick(_ACCESSORY_COLORS, accessory, "accessories")
        canvas[tr0 + 2 : tr0 + 14, 2:10] = patch

    # legs: shorts expose skin below mid-thigh
    cut, color_name = _split_compound(labels["lower_clothing"], "lower_clothing")
    if cut not in ("pants", "shorts"):
        raise ValueError(f"unknown lower_clothing category {labels['lower_clothing']!r}")
    lower = _pick(_CLOTH_COLORS, color_name, "lower_clothing")
    leg_hw = max(2, round(torso_hw * 0.45))
    cloth_end = lr1 if cut == "pants" else lr0 + round(0.45 * (lr1 - lr0))
    for leg in (slice(cx - leg_hw, cx), slice(cx + 1, cx + 1 + leg_hw)):
        canvas[lr0:cloth_end, leg] = lower
        canvas[cloth_end:lr1, leg] = skin
        canvas[lr1:bottom, leg] = _pick(
            _FEET_SHADE, _split_compound(labels["feet"], "feet")[1], "feet"
        )

    return np.clip(canvas, 0.0, 1.0)


def _hshift(img: np.ndarray, k: int) -> np.ndarray:
    """Shift horizontally by k pixels, replicating the facing edge."""
    if k == 0:
        return img
    if k > 0:
        padded = np.pad(img, ((0, 0), (k, 0), (0, 0)), mode="edge")
        return padded[:, : img.shape[1]]
    padded = np.pad(img, ((0, 0), (0, -k), (0, 0)), mode="edge")
    return padded[:, -img.shape[1] :]


def platform_view(
    canvas: np.ndarray, platform: CameraPlatform, rng: np.random.Generator
) -> np.ndarray:
    """Degrade a sprite canvas into one camera's view.

    Applies a small horizontal jitter and brightness wobble (drawn from
    ``rng``), resizes to the platform's resolution, then blurs, darkens, and
    adds sensor noise at platform-specific strengths.
    """
    out_h, out_w = PLATFORM_SIZES[platform]
    blur, brightness, noise = _PLATFORM_DEGRADATION[platform]

    shifted = _hshift(canvas, int(rng.integers(-2, 3)))
    lit = shifted * brightness * (1.0 + 0.05 * rng.standard_normal())
    pil = Image.fromarray((np.clip(lit, 0.0, 1.0) * 255).astype(np.uint8))
    resized = np.asarray(pil.resize((out_w, out_h), Image.BILINEAR), dtype=np.float64) / 255.0
    if blur > 0:
        resized = gaussian_filter(resized, sigma=(blur, blur, 0.0))
    resized = resized + rng.normal(0.0, noise, size=resized.shape)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)


def sample_labels(schema: AttributeSchema, rng: np.random.Generator) -> dict[str, str]:
    """Draw one uniformly random category per attribute group."""
    return {g.name: g.categories[int(rng.integers(g.size))] for g in schema.groups}


@dataclass(frozen=True)
class FixtureSummary:
    """What a fixture generation run produced."""

    root: str
    seed: int
    schema_mode: int | str
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    images_per_platform: int
    controlled_pairs: tuple[tuple[int, int, str], ...]
    manifest_path: str


def _controlled_pair_labels(
    labels_a: dict[str, str],
    group_name: str,
    schema: AttributeSchema,
    rng: np.random.Generator,
) -> dict[str, str]:
    """Copy labels, changing exactly the one group that defines the pair."""
    group = schema.group(group_name)
    if group_name == "hair_color" and labels_a.get("hairstyle") == "bald":
        # hair color must stay visible in the rendering
        labels_a["hairstyle"] = "medium"
    others = [c for c in group.categories if c != labels_a[group_name]]
    labels_b = dict(labels_a)
    labels_b[group_name] = others[int(rng.integers(len(others)))]
    return labels_b


def generate_fixture(
    out_dir: str | Path,
    seed: int = 7,
    train_ids: int = 4,
    test_ids: int = 0,
    images_per_platform: int = 2,
    schema_mode: int | str = 88,
    controlled_pairs: int = 0,
) -> FixtureSummary:
    """Write a complete synthetic dataset under ``out_dir``.

    Identities 1..train_ids go to train/, the next test_ids to test/. Each
    identity gets ``images_per_platform`` images per camera view, named
    ``PID_CAM_SEQ.png``. The last ``2 * controlled_pairs`` train identities
    are organized into pairs whose labels differ in exactly one group
    (rotating through CONTROL_GROUPS), recorded in the manifest.

    Attribute assignments are drawn once from ``seed``; per-image jitter is
    seeded from (seed, identity, camera, sequence), so output is byte-stable.
    """
    if train_ids < 2:
        raise ValueError(f"need at least 2 train identities, got {train_ids}")
    if test_ids < 0 or images_per_platform < 1:
        raise ValueError("test_ids must be >= 0 and images_per_platform >= 1")
    if controlled_pairs < 0 or 2 * controlled_pairs > train_ids:
        raise ValueError(
            f"{controlled_pairs} controlled pairs need {2 * controlled_pairs} train "
            f"identities, have {train_ids}"
        )

    out_dir = Path(out_dir)
    schema = load_schema(schema_mode)
    rng = np.random.default_rng(seed)

    train = tuple(range(1, train_ids + 1))
    test = tuple(range(train_ids + 1, train_ids + test_ids + 1))
    labels = {pid: sample_labels(schema, rng) for pid in (*train, *test)}

    pairs: list[tuple[int, int, str]] = []
    first_paired = train_ids - 2 * controlled_pairs + 1
    for i in range(controlled_pairs):
        pid_a = first_paired + 2 * i
        pid_b = pid_a + 1
        group_name = CONTROL_GROUPS[i % len(CONTROL_GROUPS)]
        labels[pid_b] = _controlled_pair_labels(labels[pid_a], group_name, schema, rng)
        pairs.append((pid_a, pid_b, group_name))

    platforms = tuple(CameraPlatform)
    for split_name, pids in (("train", train), ("test", test)):
        if not pids:
            continue
        split_dir = out_dir / split_name
        split_dir.mkdir(parents=True, exist_ok=True)
        for pid in pids:
            canvas = render_identity(labels[pid])
            for plat_idx, platform in enumerate(platforms):
                for seq in range(images_per_platform):
                    jitter = np.random.default_rng((seed, pid, plat_idx, seq))
                    img = platform_view(canvas, platform, jitter)
                    name = f"{pid:04d}_{platform.code}_{seq:04d}.png"
                    Image.fromarray((img * 255).astype(np.uint8)).save(split_dir / name)

    _write_attributes_csv(out_dir / "attributes.csv", labels, schema)
    manifest_path = out_dir / "manifest.txt"
    _write_manifest(
        manifest_path,
        seed=seed,
        schema_mode=schema_mode,
        images_per_platform=images_per_platform,
        splits=(("train", train), ("test", test)),
        pairs=pairs,
        labels=labels,
        schema=schema,
    )
    return FixtureSummary(
        root=str(out_dir),
        seed=seed,
        schema_mode=schema_mode,
        train_ids=train,
        test_ids=test,
        images_per_platform=images_per_platform,
        controlled_pairs=tuple(pairs),
        manifest_path=str(manifest_path),
    )


def _write_attributes_csv(
    path: Path, labels: dict[int, dict[str, str]], schema: AttributeSchema
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("person_id", *schema.group_names))
        for pid in sorted(labels):
            writer.writerow((pid, *(labels[pid][g] for g in schema.group_names)))


def _write_manifest(
    path: Path,
    *,
    seed: int,
    schema_mode: int | str,
    images_per_platform: int,
    splits: tuple[tuple[str, tuple[int, ...]], ...],
    pairs: list[tuple[int, int, str]],
    labels: dict[int, dict[str, str]],
    schema: AttributeSchema,
) -> None:
    lines = [
        "fixture-version: 1",
        f"seed: {seed}",
        f"schema-mode: {schema_mode}",
        f"images-per-platform: {images_per_platform}",
        f"canvas: {CANVAS_SHAPE[0]}x{CANVAS_SHAPE[1]}",
    ]
    for split_name, pids in splits:
        lines += ["", f"[split {split_name}]", f"ids: {len(pids)}"]
        if pids:
            lines.append(f"id-range: {pids[0]}..{pids[-1]}")
        for platform in CameraPlatform:
            lines.append(
                f"images-{platform.name.lower()}: {len(pids) * images_per_platform}"
            )
    if pairs:
        lines += ["", "[controlled-pairs]"]
        lines += [f"pair: {a} {b} {group}" for a, b, group in pairs]
    split_of = {pid: name for name, pids in splits for pid in pids}
    for pid in sorted(labels):
        lines += ["", f"[identity {pid}]", f"split: {split_of[pid]}"]
        lines += [f"{g}: {labels[pid][g]}" for g in schema.group_names]
    path.write_text("\n".join(lines) + "\n")


def parse_manifest(path: str | Path) -> dict[str, dict[str, str | list[str]]]:
    """Parse a fixture manifest into {section: {key: value}}.

    Top-level keys (before any section header) live under the "" section.
    A key repeated within a section collects its values into a list.
    """
    sections: dict[str, dict[str, str | list[str]]] = {"": {}}
    current = sections[""]
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key: value', got {line!r}")
        key, value = key.strip(), value.strip()
        if key in current:
            existing = current[key]
            if isinstance(existing, list):
                existing.append(value)
            else:
                current[key] = [existing, value]
        else:
            current[key] = value
    return sections
