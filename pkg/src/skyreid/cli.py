"""Command line entry point tying fixtures, training, evaluation, and reports together.

Exit codes: 0 on success, 1 on a validation problem (bad arguments, bad
config, unreadable inputs), 2 on a runtime fault. Every run with an output
directory leaves a resolved settings snapshot beside its artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .adh import explain_pair, write_explanation
from .config import RunConfig
from .data import load_image, parse_dataset, parse_record_name, ParseError
from .fixture import generate_fixture
from .protocol import emit_report, run_all_protocols
from .schema import SchemaError
from .train import load_checkpoint, run_ablation, run_training
from .types import CameraPlatform, ConfigurationError, ImageRecord, ProtocolResult


class CliError(Exception):
    """A problem the user can fix by changing arguments or inputs."""


class _Parser(argparse.ArgumentParser):
    # argparse exits the process on usage errors; surface them as exit code 1
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="settings file (YAML)")
    sub.add_argument("--out", help="output directory (created if absent)")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one dotted config key; repeatable; wins over file and --seed",
    )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="skyreid",
        description="Cross-platform person re-identification with attribute-level explanations.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fixture-gen", help="write a synthetic labeled dataset")
    _add_common(p)
    p.add_argument("--ids", type=int, default=24, help="training identities (default 24)")
    p.add_argument("--test-ids", type=int, default=24, help="held-out identities (default 24)")
    p.add_argument("--images-per-platform", type=int, default=4)
    p.add_argument("--mode", type=int, default=88, help="attribute schema: 28, 38, or 88 bits")
    p.add_argument("--controlled-pairs", type=int, default=0,
                   help="test-split identity pairs differing in exactly one label group")

    p = sub.add_parser("train", help="train a model on a parsed dataset")
    _add_common(p)

    p = sub.add_parser("evaluate", help="run all protocol directions with a trained model")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained model archive (.npz)")
    p.add_argument("--data", help="dataset root; defaults to the checkpoint's data.root")

    p = sub.add_parser("explain", help="rank attribute contributions for one image pair")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained model archive (.npz)")
    p.add_argument("--pair", nargs=2, metavar=("QUERY", "GALLERY"), help="two image files")
    p.add_argument("--max-panels", type=int, default=12, help="saliency panels in the image grid")

    p = sub.add_parser("ablate", help="train all four stream combinations and compare")
    _add_common(p)

    p = sub.add_parser("report", help="re-render evaluation results as a table and plot")
    _add_common(p)
    p.add_argument("--results", action="append", default=[], metavar="JSON",
                   help="results.json from evaluate/ablate; repeatable")
    p.add_argument("--baseline", help="tag whose rows anchor the deltas")
    p.add_argument("--impact", help="JSON file of attribute name to score for the bar plot")

    return parser


def _resolve_config(args) -> RunConfig:
    # precedence: file < --seed < --set
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.overrides:
        cfg = cfg.with_overrides(args.overrides)
    return cfg


def _out_dir(args, required_by: str | None = None) -> Path | None:
    if args.out is None:
        if required_by is not None:
            raise CliError(f"{required_by} requires --out for its artifacts")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_invocation(out: Path, args, keys: tuple[str, ...]) -> None:
    snapshot = {"subcommand": args.subcommand}
    snapshot.update({key: getattr(args, key) for key in keys})
    (out / "invocation.yaml").write_text(yaml.safe_dump(snapshot, sort_keys=False))


def _load_dataset(cfg: RunConfig, flag_hint: str):
    if not cfg.data.root:
        raise CliError(f"no dataset root configured; set it via {flag_hint}")
    return parse_dataset(cfg.data.root, mode=cfg.mode, image_size=cfg.data.image_size)


def _cmd_fixture_gen(args) -> int:
    out = _out_dir(args, required_by="fixture-gen")
    seed = args.seed if args.seed is not None else 7
    summary = generate_fixture(
        out,
        seed=seed,
        train_ids=args.ids,
        test_ids=args.test_ids,
        images_per_platform=args.images_per_platform,
        schema_mode=args.mode,
        controlled_pairs=args.controlled_pairs,
    )
    _write_invocation(
        out, args, ("seed", "ids", "test_ids", "images_per_platform", "mode", "controlled_pairs")
    )
    images = 3 * summary.images_per_platform * (len(summary.train_ids) + len(summary.test_ids))
    print(
        f"fixture: {len(summary.train_ids)} train + {len(summary.test_ids)} test identities, "
        f"{images} images -> {out}"
    )
    return 0


def _cmd_train(args) -> int:
    out = _out_dir(args, required_by="train")
    cfg = _resolve_config(args)
    dataset = _load_dataset(cfg, "--config or --set data.root=PATH")
    outcome = run_training(cfg, dataset, out_dir=out)
    last = outcome.history[-1]
    print(
        f"trained {len(outcome.history)} steps; final loss {last['total']:.4f}; "
        f"checkpoint {outcome.checkpoint_path}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise CliError("evaluate requires --checkpoint pointing to a trained model archive")
    model, cfg, _ = load_checkpoint(args.checkpoint)
    if args.data:
        cfg = replace(cfg, data=replace(cfg.data, root=args.data))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.overrides:
        cfg = cfg.with_overrides(args.overrides)
    dataset = _load_dataset(cfg, "--data or --set data.root=PATH")
    results = run_all_protocols(model, dataset)
    out = _out_dir(args)
    report = emit_report(list(results.values()), out_dir=out)
    if out is not None:
        cfg.save(out / "config.yaml")
    print(report.text, end="")
    return 0


def _record_for(path: str, image_size, fallback_id: int, fallback_platform) -> ImageRecord:
    pixels = load_image(path, image_size)
    try:
        pid, platform, seq = parse_record_name(Path(path).name)
    except ParseError:
        pid, platform, seq = fallback_id, fallback_platform, 0
    return ImageRecord(
        person_id=pid, platform=platform, sequence=seq, pixel_data=pixels, source_path=str(path)
    )


def _cmd_explain(args) -> int:
    if not args.checkpoint:
        raise CliError("explain requires --checkpoint pointing to a trained model archive")
    if not args.pair:
        raise CliError("explain requires --pair QUERY GALLERY (two image files)")
    model, cfg, _ = load_checkpoint(args.checkpoint)
    if model.adh is None:
        raise CliError("this checkpoint was trained without the explanation head (model.ep=false)")
    query = _record_for(args.pair[0], model.input_size, 0, CameraPlatform.AERIAL)
    gallery = _record_for(args.pair[1], model.input_size, 1, CameraPlatform.CCTV)
    explanation = explain_pair(model, query, gallery)
    dec = explanation.decomposition
    print(f"embedding distance: {dec.total:.6f}")
    for rank, k in enumerate(explanation.ranking[:5], start=1):
        print(f"{rank}. {explanation.attribute_names[k]} d={dec.per_attribute[k]:.6f}")
    out = _out_dir(args)
    if out is None:
        print("no --out given; full report and saliency images skipped")
        return 0
    paths = write_explanation(explanation, out, max_panels=args.max_panels)
    cfg.save(out / "config.yaml")
    print(f"report: {paths['summary']}")
    print(f"saliency: {paths['saliency']}")
    return 0


def _cmd_ablate(args) -> int:
    out = _out_dir(args, required_by="ablate")
    cfg = _resolve_config(args)
    dataset = _load_dataset(cfg, "--config or --set data.root=PATH")
    report, _ = run_ablation(cfg, dataset, out_dir=out)
    cfg.save(out / "config.yaml")
    print(report.text, end="")
    return 0


def _rows_to_results(rows) -> dict[str, list[ProtocolResult]]:
    grouped: dict[str, list[ProtocolResult]] = {}
    for row in rows:
        try:
            query_code, gallery_code = row["direction"].split("->")
            cmc = {
                int(key.removeprefix("rank")): value
                for key, value in row.items()
                if key.startswith("rank")
            }
            result = ProtocolResult(
                query_platform=CameraPlatform.from_code(query_code),
                gallery_platform=CameraPlatform.from_code(gallery_code),
                mAP=row["mAP"],
                cmc=cmc,
                query_count=row["query_count"],
                gallery_count=row["gallery_count"],
            )
        except (KeyError, ValueError, AttributeError) as exc:
            raise CliError(f"malformed results row {row!r}: {exc}") from exc
        grouped.setdefault(row.get("tag", "model"), []).append(result)
    return grouped


def _cmd_report(args) -> int:
    if not args.results:
        raise CliError("report requires at least one --results JSON file")
    rows = []
    for path in args.results:
        try:
            rows.extend(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"{path} is not valid JSON: {exc}") from exc
    impact = None
    if args.impact:
        impact = {str(k): float(v) for k, v in json.loads(Path(args.impact).read_text()).items()}
    out = _out_dir(args)
    report = emit_report(
        _rows_to_results(rows), out_dir=out, baseline=args.baseline, attribute_impact=impact
    )
    if out is not None:
        _write_invocation(out, args, ("results", "baseline", "impact"))
    print(report.text, end="")
    return 0


_COMMANDS = {
    "fixture-gen": _cmd_fixture_gen,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.subcommand](args)
    except (CliError, ConfigurationError, ParseError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - exercised via injected faults
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
