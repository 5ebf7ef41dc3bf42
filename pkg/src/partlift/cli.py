"""Command-line surface: generate fixtures, render, segment, label, evaluate.

Exit codes: 0 on success, 2 for usage or input errors, 3 when a backend is
unreachable after retries. All randomness flows from --seed, so identical
invocations produce byte-identical output files with the mock backends.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io as plio
from .backends import (
    BackendUnavailableError,
    DetectionBackend,
    GroundTruth,
    NoiseParams,
    NoisyDetector,
    NoisySegmenter,
    OracleDetector,
    OracleSegmenter,
    RemoteDetector,
    RemoteSegmenter,
    SegmentationBackend,
    TextPrompt,
)
from .geometry import normalize_to_unit_sphere
from .labeling import matrix_to_csv
from .metrics import build_report
from .multiview import build_view_graph, place_viewpoints, render
from .pipeline import (
    PipelineConfig,
    SegmentationRun,
    label_parts,
    render_views,
    segment_unlabeled,
)
from .scenes import SceneSpec, generate_scene

log = logging.getLogger("partlift")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _parse_noise(spec: str) -> NoiseParams:
    params = NoiseParams()
    if not spec:
        return params
    for item in spec.split(","):
        if not item:
            continue
        if "=" not in item:
            raise CliError(f"bad noise parameter {item!r}; expected key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key in ("erosion", "dilation", "jitter"):
            setattr(params, key, int(value))
        elif key in ("drop", "drop_rate"):
            params.drop_rate = float(value)
        elif key in ("merge", "merge_rate"):
            params.merge_rate = float(value)
        elif key in ("mislabel", "mislabel_rate"):
            params.mislabel_rate = float(value)
        else:
            raise CliError(f"unknown noise parameter {key!r}")
    return params


def _build_backends(
    selector: str, gt: GroundTruth | None, seed: int
) -> tuple[SegmentationBackend, DetectionBackend]:
    if selector == "oracle":
        if gt is None:
            raise CliError("oracle backend requires --gt")
        return OracleSegmenter(gt), OracleDetector(gt)
    if selector.startswith("noisy:") or selector == "noisy":
        if gt is None:
            raise CliError("noisy backend requires --gt")
        params = _parse_noise(selector.partition(":")[2])
        return (
            NoisySegmenter(gt, params, seed=seed),
            NoisyDetector(gt, params, seed=seed),
        )
    if selector.startswith("remote:"):
        url = selector.partition(":")[2]
        if not url:
            raise CliError("remote backend requires a URL, e.g. remote:http://host:port")
        return RemoteSegmenter(url), RemoteDetector(url)
    raise CliError(f"unknown backend {selector!r}")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        viewpoint_count=args.views,
        resolution=args.resolution,
        fps_count=args.fps_count,
        sve_fps_count=args.sve_fps_count,
        merge_threshold=args.threshold,
        splat_radius=args.splat_radius,
        extend=not args.no_extend,
        use_cnvp=not args.no_cnvp,
        vote_mode=args.vote_mode,
        seed=args.seed,
        skip_on_failure=args.skip_on_failure,
        jobs=args.jobs,
    )


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--resolution", type=int, default=800)
    p.add_argument("--fps-count", type=int, default=256)
    p.add_argument("--sve-fps-count", type=int, default=8)
    p.add_argument("--threshold", "-T", type=float, default=0.3,
                   help="merge threshold in (0, 1)")
    p.add_argument("--splat-radius", type=int, default=1)
    p.add_argument("--backend", default="oracle",
                   help="oracle | noisy:<k=v,...> | remote:<url>")
    p.add_argument("--gt", help="ground-truth sidecar JSON (mock backends)")
    p.add_argument("--no-extend", action="store_true",
                   help="skip all single-viewpoint extensions")
    p.add_argument("--no-cnvp", action="store_true",
                   help="label from raw votes without refinement")
    p.add_argument("--vote-mode", choices=("both", "2d", "3d"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--skip-on-failure", action="store_true",
                   help="skip views whose backend calls keep failing")


def _read_cloud(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(f"input file not found: {path}")
    try:
        return plio.read_ply(p)
    except (plio.FileFormatError, OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _read_gt(path: str | None) -> GroundTruth | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise CliError(f"ground-truth file not found: {path}")
    try:
        return plio.read_ground_truth(p)
    except plio.FileFormatError as exc:
        raise CliError(str(exc)) from exc


def cmd_gen(args: argparse.Namespace) -> int:
    rotation = None
    if args.rotate:
        try:
            rotation = tuple(float(v) for v in args.rotate.split(","))
            if len(rotation) != 3:
                raise ValueError
        except ValueError:
            raise CliError("--rotate expects three comma-separated angles")
    try:
        spec = SceneSpec(
            template=args.template, total_points=args.points, seed=args.seed,
            rotation=rotation,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    cloud, gt = generate_scene(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plio.write_ply(out, cloud, binary=not args.ascii)
    gt_path = args.gt_out or str(out.with_suffix(".gt.json"))
    plio.write_ground_truth(gt_path, gt)
    print(f"wrote {out} ({len(cloud)} points) and {gt_path}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    cloud = _read_cloud(args.input)
    normalized, _ = normalize_to_unit_sphere(cloud)
    viewpoints = place_viewpoints(args.views)
    by_id = {vp.id: vp for vp in viewpoints}
    if args.view not in by_id:
        raise CliError(f"invalid view id {args.view}; have 1..{len(viewpoints)}")
    rp = render(normalized, by_id[args.view], args.resolution, args.splat_radius)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"view_{args.view:02d}.png"
    idx = out_dir / f"view_{args.view:02d}.idx"
    plio.write_render_debug(rp, png, idx)
    print(f"wrote {png} and {idx}")
    return EXIT_OK


def cmd_segment(args: argparse.Namespace) -> int:
    cloud = _read_cloud(args.input)
    gt = _read_gt(args.gt)
    if gt is not None and len(gt) != len(cloud):
        raise CliError("ground truth and cloud disagree on point count")
    segmenter, _ = _build_backends(args.backend, gt, args.seed)
    config = _config_from_args(args)
    run = segment_unlabeled(cloud, segmenter, config)
    plio.write_parts(args.out, run.parts, len(cloud))
    print(f"wrote {args.out} ({len(run.parts)} parts)")
    return EXIT_OK


def _renders_only_run(cloud, config: PipelineConfig) -> SegmentationRun:
    """Re-render all views so an existing parts file can be labeled."""
    normalized, transform = normalize_to_unit_sphere(cloud)
    viewpoints = place_viewpoints(config.viewpoint_count, config.camera_distance)
    renders = render_views(
        normalized, viewpoints, config.resolution, config.splat_radius, config.jobs
    )
    return SegmentationRun(
        parts=[], groups=[], renders=renders, viewpoints=viewpoints,
        graph=build_view_graph(viewpoints), cloud=normalized, transform=transform,
    )


def cmd_label(args: argparse.Namespace) -> int:
    cloud = _read_cloud(args.input)
    gt = _read_gt(args.gt)
    if not args.prompt.strip():
        raise CliError("prompt must list at least one part name")
    prompt = TextPrompt.from_string(args.prompt)
    parts, num_points = plio.read_parts(args.parts)
    if num_points != len(cloud):
        raise CliError("parts file and cloud disagree on point count")
    _, detector = _build_backends(args.backend, gt, args.seed)
    config = _config_from_args(args)
    run = _renders_only_run(cloud, config)
    run.parts = parts
    labeled, votes, decision, _ = label_parts(run, detector, prompt, config)
    plio.write_parts(args.out, labeled, len(cloud), prompt.class_names)
    if args.votes_csv:
        Path(args.votes_csv).write_text(
            matrix_to_csv(votes, prompt.class_names), encoding="utf-8"
        )
    if args.decision_csv:
        Path(args.decision_csv).write_text(
            matrix_to_csv(decision, prompt.class_names), encoding="utf-8"
        )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cloud = _read_cloud(args.input)
    gt = _read_gt(args.gt)
    if gt is not None and len(gt) != len(cloud):
        raise CliError("ground truth and cloud disagree on point count")
    if not args.prompt.strip():
        raise CliError("prompt must list at least one part name")
    prompt = TextPrompt.from_string(args.prompt)
    segmenter, detector = _build_backends(args.backend, gt, args.seed)
    config = _config_from_args(args)
    run = segment_unlabeled(cloud, segmenter, config)
    if run.parts:
        labeled, _, _, _ = label_parts(run, detector, prompt, config)
    else:
        labeled = []
    plio.write_parts(args.out, labeled, len(cloud), prompt.class_names)
    print(f"wrote {args.out} ({len(labeled)} parts)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    pairs: list[tuple[str, str, str]] = []
    if args.pred and args.gt:
        pairs.append((args.pred, args.gt, args.category or "object"))
    for raw in args.pair or []:
        bits = raw.split(",")
        if len(bits) == 2:
            pairs.append((bits[0], bits[1], "object"))
        elif len(bits) == 3:
            pairs.append((bits[0], bits[1], bits[2]))
        else:
            raise CliError(f"--pair expects pred,gt[,category], got {raw!r}")
    if not pairs:
        raise CliError("nothing to evaluate; give PRED GT or --pair")

    entries = []
    for k, (pred_path, gt_path, category) in enumerate(pairs):
        if not Path(pred_path).exists():
            raise CliError(f"prediction file not found: {pred_path}")
        gt = _read_gt(gt_path)
        try:
            parts, num_points = plio.read_parts(pred_path, gt.class_names)
        except plio.FileFormatError as exc:
            raise CliError(str(exc)) from exc
        if num_points != len(gt):
            raise CliError(
                f"{pred_path}: point count {num_points} does not match "
                f"ground truth {len(gt)}"
            )
        entries.append((f"obj_{k}:{Path(pred_path).stem}", category, parts, gt))
    report = build_report(entries)
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
    print(report.to_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partlift",
        description="Multi-view lifting of 2D segmentation into labeled 3D parts",
    )
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic fixture")
    p.add_argument("--template", required=True)
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotate", help="Euler angles deg, e.g. 10,-20,45")
    p.add_argument("--ascii", action="store_true", help="write ascii PLY")
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="export one view's PNG and index map")
    p.add_argument("--input", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--resolution", type=int, default=800)
    p.add_argument("--splat-radius", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("segment", help="unlabeled 3D part segmentation")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("label", help="label an existing parts file")
    p.add_argument("--input", required=True)
    p.add_argument("--parts", required=True)
    p.add_argument("--prompt", required=True,
                   help="comma-separated part names, e.g. 'lid,handle,spout'")
    p.add_argument("--out", required=True)
    p.add_argument("--votes-csv")
    p.add_argument("--decision-csv")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("pipeline", help="segment then label in one run")
    p.add_argument("--input", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred", nargs="?")
    p.add_argument("gt", nargs="?")
    p.add_argument("--category")
    p.add_argument("--pair", action="append",
                   help="pred,gt[,category]; repeatable for batches")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BackendUnavailableError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
