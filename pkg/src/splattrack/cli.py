"""Command-line pipeline: synth -> fit -> track -> eval, plus render.

Exit codes: 0 success, 2 usage error, 3 input/format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .errors import ContractError, NumericalError, SceneSpecError, SplatTrackError
from .evaluation import EvalConfig, evaluate, strided_queries
from .fit import FitConfig, fit_video
from .geom import Camera
from .splat import RasterConfig, render_video
from .synth import SceneSpec, generate_scene, standard_suite
from .track import Query, Tracker, TrackerConfig

log = logging.getLogger("splattrack")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(SplatTrackError):
    pass


def _floats(text: str, count: int | None = None, what: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}")
    if count is not None and len(vals) != count:
        raise UsageError(f"{what}: expected {count} numbers, got {len(vals)}")
    return vals


def _camera(flag: str | None, width: int, height: int) -> Camera:
    if not flag:
        return Camera.default(width, height)
    fx, fy, cx, cy = _floats(flag, 4, "--camera")
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)


# -- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec:
        spec = SceneSpec.from_dict(io.read_json(args.spec))
    elif args.suite is not None:
        suite = standard_suite(args.seed)
        if not 0 <= args.suite < len(suite):
            raise UsageError(f"--suite must be in [0, {len(suite)})")
        spec = suite[args.suite]
    else:
        raise UsageError("give a scene spec path or --suite INDEX")
    if args.frames is not None:
        if not 2 <= args.frames <= spec.k:
            raise UsageError(f"--frames must be in [2, {spec.k}]")
        spec = spec.truncated(args.frames)
    out_dir = io.ensure_dir(args.out)
    result = generate_scene(spec)
    io.write_frames(out_dir, result.video)
    io.write_text(out_dir / "scene.json", io.dumps(spec.to_dict()))
    io.save_gt(out_dir / "gt_tracks.json", result.gt_tracks, spec.width, spec.height)
    io.save_trajectory(out_dir / "gt_trajectory.json", result.gt_trajectory, result.camera)
    log.info("wrote %d frames to %s", spec.k, out_dir)
    return EXIT_OK


# -- fit --------------------------------------------------------------------


def _report_stem(out: Path) -> Path:
    return out.with_name(out.stem + ".report")


def cmd_fit(args) -> int:
    video = io.read_frames(args.frames_dir)
    camera = _camera(args.camera, video.shape[2], video.shape[1])
    cfg = FitConfig(
        n=args.n, iters=args.iters, seed=args.seed,
        lr_means=args.lr_means, lr_dmu=args.lr_dmu, lr_colors=args.lr_colors,
        lr_dr=args.lr_dr, lr_scales=args.lr_scales, lr_opacities=args.lr_opacities,
        lr_quats=args.lr_quats, init_depth=args.init_depth,
        freeze_dmu=args.freeze_dmu, freeze_dr=args.freeze_dr,
    )
    traj, report = fit_video(video, camera, cfg)
    out = Path(args.out)
    io.save_trajectory(out, traj, camera)
    stem = Path(args.report) if args.report else _report_stem(out)
    io.save_report(stem, report.to_dict())
    log.info("final loss %.6g, psnr %.2f dB, %.1fs", report.final_loss, report.mean_psnr,
             report.wall_time)
    return EXIT_OK


# -- track ------------------------------------------------------------------


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(top_k=args.top_k, tau_vis=args.tau_vis, beta=args.beta,
                         eps=args.eps, normalize_flow=not args.no_normalize_flow)


def _read_queries(path) -> list[Query]:
    d = io.read_json(path)
    records = d["queries"] if isinstance(d, dict) else d
    try:
        return [Query(int(q["t"]), (float(q["x"]), float(q["y"]))) for q in records]
    except (KeyError, TypeError, ValueError) as exc:
        raise io.FormatError(f"malformed query file: {exc}") from exc


def cmd_track(args) -> int:
    traj, camera = io.load_trajectory(args.trajectory)
    cfg = _tracker_config(args)
    queries: list[Query] = []
    gt_index = None
    if args.queries:
        queries += _read_queries(args.queries)
    for q in args.query or []:
        t, x, y = _floats(q, 3, "--query")
        queries.append(Query(int(t), (x, y)))
    if args.gt:
        gts, _, _ = io.load_gt(args.gt)
        gt_index = []
        ecfg = EvalConfig(stride=args.stride)
        for i, g in enumerate(gts):
            if g.k != traj.k:
                raise io.FormatError(f"ground truth has {g.k} frames, trajectory has {traj.k}")
            for q in strided_queries(g, ecfg):
                queries.append(q)
                gt_index.append(i)
        if args.queries or args.query:
            raise UsageError("--gt cannot be combined with explicit queries")
    if not queries:
        raise UsageError("no queries: use --query, --queries or --gt")
    for q in queries:
        try:
            q.validate(traj.k, camera.width, camera.height)
        except ContractError as exc:
            raise UsageError(str(exc))
    tracker = Tracker(traj, camera, cfg)
    tracks = tracker.track_all(queries)
    io.save_tracks(args.out, tracks, traj.k, cfg, gt_index)
    log.info("tracked %d queries", len(tracks))
    return EXIT_OK


# -- eval -------------------------------------------------------------------


def eval_files(track_path, gt_path, thresholds=None):
    tracks, gt_index, _ = io.load_tracks(track_path)
    gts, width, height = io.load_gt(gt_path)
    if gt_index is None:
        if len(tracks) != len(gts):
            raise io.FormatError("track file has no gt indices and counts differ")
        gt_index = list(range(len(gts)))
    paired = []
    for tr, gi in zip(tracks, gt_index):
        if not 0 <= gi < len(gts):
            raise io.FormatError(f"gt index {gi} out of range")
        if tr.points.shape[0] != gts[gi].k:
            raise io.FormatError(
                f"track has {tr.points.shape[0]} frames, ground truth has {gts[gi].k}")
        paired.append(gts[gi])
    kwargs = {"image_size": (width, height)}
    if thresholds:
        kwargs["thresholds"] = tuple(thresholds)
    return evaluate(tracks, paired, EvalConfig(**kwargs))


def cmd_eval(args) -> int:
    thresholds = _floats(args.thresholds, None, "--thresholds") if args.thresholds else None
    report = eval_files(args.tracks, args.gt, thresholds)
    io.save_report(Path(args.out), report)
    sys.stdout.write(io.report_text(report))
    return EXIT_OK


# -- render -----------------------------------------------------------------

_TRACK_COLORS = np.array([
    [1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.3, 0.5, 1.0], [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0], [0.2, 1.0, 1.0], [1.0, 0.6, 0.1], [0.7, 0.7, 0.7],
])


def _draw_circle(img, center, radius, color, filled):
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.hypot(xs - center[0], ys - center[1])
    mask = d <= radius if filled else np.abs(d - radius) <= 0.5
    img[mask] = color


def flow_to_image(grid):
    """Affine map of a flow field to RGB in [0, 1]; zero flow maps to 0.5 gray."""
    peak = float(np.max(np.abs(grid))) if grid.size else 0.0
    scale = 2.0 * peak if peak > 0 else 1.0
    img = np.full(grid.shape[:2] + (3,), 0.5)
    img[..., 0] = 0.5 + grid[..., 0] / scale
    img[..., 1] = 0.5 + grid[..., 1] / scale
    return img, {"channel_x": "red", "channel_y": "green", "offset": 0.5,
                 "scale": 1.0 / scale, "formula": "value = offset + scale * flow"}


def cmd_render(args) -> int:
    traj, camera = io.load_trajectory(args.trajectory)
    out_dir = io.ensure_dir(args.out)
    bg = tuple(_floats(args.background, 3, "--background")) if args.background else ()
    raster = RasterConfig(background=bg)
    video = render_video(traj, camera, raster)
    io.write_frames(out_dir, video)
    if args.flow is not None:
        if not 0 <= args.flow < traj.k - 1:
            raise UsageError(f"--flow frame must be in [0, {traj.k - 1})")
        tracker = Tracker(traj, camera, TrackerConfig(top_k=min(8, traj.n)))
        img, mapping = flow_to_image(tracker.flow(args.flow).grid)
        io.write_ppm(out_dir / f"flow_{args.flow:04d}.ppm", img)
        io.write_text(out_dir / f"flow_{args.flow:04d}.json", io.dumps(mapping))
    if args.overlay:
        tracks, _, _ = io.load_tracks(args.overlay)
        for t in range(traj.k):
            img = video[t].copy()
            for j, tr in enumerate(tracks):
                if t >= tr.points.shape[0]:
                    raise io.FormatError("overlay track length differs from trajectory")
                _draw_circle(img, tr.points[t], 2.0, _TRACK_COLORS[j % len(_TRACK_COLORS)],
                             filled=bool(tr.visible[t]))
            io.write_ppm(out_dir / f"overlay_{t:04d}.ppm", img)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="splattrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    s.add_argument("spec", nargs="?", help="scene spec JSON file")
    s.add_argument("--suite", type=int, help="use standard-suite scene INDEX instead of a file")
    s.add_argument("--frames", type=int, help="keep only the first FRAMES frames")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    d = FitConfig()
    f = sub.add_parser("fit", help="fit a Gaussian trajectory to a frame directory")
    f.add_argument("frames_dir")
    f.add_argument("--camera", help="fx,fy,cx,cy (default: f=max(W,H), center)")
    f.add_argument("--n", type=int, default=d.n)
    f.add_argument("--iters", type=int, default=d.iters)
    f.add_argument("--seed", type=int, default=d.seed)
    for name in ("lr_means", "lr_dmu", "lr_colors", "lr_dr", "lr_scales",
                 "lr_opacities", "lr_quats"):
        f.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(d, name))
    f.add_argument("--init-depth", type=float, default=d.init_depth)
    f.add_argument("--freeze-dmu", action="store_true")
    f.add_argument("--freeze-dr", action="store_true")
    f.add_argument("--report", help="report path stem (default: <out>.report)")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    tc = TrackerConfig()
    t = sub.add_parser("track", help="track query points through a trajectory")
    t.add_argument("trajectory")
    t.add_argument("--queries", help="JSON file with a list of {t, x, y}")
    t.add_argument("--query", action="append", help="t,x,y (repeatable)")
    t.add_argument("--gt", help="ground-truth file; queries on its stride grid")
    t.add_argument("--stride", type=int, default=EvalConfig().stride)
    t.add_argument("--top-k", type=int, default=tc.top_k)
    t.add_argument("--tau-vis", type=float, default=tc.tau_vis)
    t.add_argument("--beta", type=float, default=tc.beta)
    t.add_argument("--eps", type=float, default=tc.eps)
    t.add_argument("--no-normalize-flow", action="store_true")
    t.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score a track file against ground truth")
    e.add_argument("tracks")
    e.add_argument("gt")
    e.add_argument("--thresholds", help="comma-separated radii at 256x256 scale")
    e.add_argument("--out", required=True, help="report path stem")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render frames, flow fields and track overlays")
    r.add_argument("trajectory")
    r.add_argument("--flow", type=int, help="also emit the flow field of frame T")
    r.add_argument("--overlay", help="track file to draw over the frames")
    r.add_argument("--background", help="r,g,b background")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"splattrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"splattrack {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, ContractError, SceneSpecError, OSError) as exc:
        print(f"splattrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
