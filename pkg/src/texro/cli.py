"""Command-line interface.

Exit codes: 0 success, 2 configuration or input errors, 3 denoiser
failures, 4 geometry failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path

from .config import DENOISER_KINDS, PipelineConfig
from .errors import ConfigError, TexroError
from .geometry import Camera, load_mesh, normalize_mesh, save_obj
from .pipeline import PipelineFailure, export, run, write_report
from .raster import load_texture, rasterize, save_png
from .schedule import StepPlan, build_schedule

logger = logging.getLogger("texro")

EXIT_OK = 0
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _load_normalized(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"mesh file not found: {p}")
    return normalize_mesh(load_mesh(p))


def cmd_select_views(args) -> int:
    from .viewselect import compute_visibility, greedy_cover, sample_candidates

    if not 0 < args.radius_min <= args.radius_max:
        raise ConfigError(f"need 0 < --radius-min <= --radius-max, got {args.radius_min}, {args.radius_max}")
    mesh = _load_normalized(args.mesh)
    cands = sample_candidates(args.candidates, args.radius_min, args.radius_max, args.seed)
    t0 = time.perf_counter()
    vis = compute_visibility(mesh, cands, args.max_angle)
    sel = greedy_cover(vis)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    report = {
        "mesh": str(args.mesh),
        "faces": mesh.n_faces,
        "candidates": len(cands),
        "seed": args.seed,
        "radius_min": args.radius_min,
        "radius_max": args.radius_max,
        "selected": len(sel),
        "views": [
            {"index": int(c), "camera": cands.camera(c).to_dict(), "new_faces": nf, "visible_faces": int(len(vis.column(c)))}
            for c, nf in zip(sel.indices, sel.new_face_counts)
        ],
        "coverage_area_fraction": sel.coverage_area_fraction,
        "coverable_area_fraction": float(mesh.face_areas[vis.coverable].sum() / mesh.face_areas.sum()),
        "uncoverable_faces": [int(f) for f in sel.uncoverable],
        "skipped_inside": list(vis.skipped),
        "wall_ms": round(wall_ms, 3),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    logger.info("%d views cover %.4f of the surface area in %.0f ms", len(sel), sel.coverage_area_fraction, wall_ms)
    return EXIT_OK


def _config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = list(getattr(args, "override", None) or [])
    if getattr(args, "denoiser", None):
        overrides.insert(0, f"denoiser.kind={args.denoiser}")
    return cfg.with_overrides(overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run(cfg)
    except PipelineFailure as exc:
        write_report(exc.report, out / "report.json")
        print(f"texro: run failed: {exc.cause}", file=sys.stderr)
        return exc.exit_code
    export(result, out, fov_y=cfg.fov_y, render_size=cfg.render_size)
    logger.info("wrote %s", out)
    return EXIT_OK


def cmd_render(args) -> int:
    mesh = _load_normalized(args.mesh)
    if not Path(args.texture).exists():
        raise ConfigError(f"texture file not found: {args.texture}")
    tex = load_texture(args.texture)
    try:
        cam = Camera(args.azimuth % 360.0, args.elevation, args.radius, args.fov, args.size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_png(rasterize(mesh, tex, cam).color, args.out)
    return EXIT_OK


def cmd_inspect_schedule(args) -> int:
    cfg = _config_from_args(args)
    sched = build_schedule(cfg.T_full, cfg.beta_start, cfg.beta_end, cfg.reduced_steps)
    plan = StepPlan(cfg.N, cfg.base_resolution, cfg.upsample_factor, cfg.slope, cfg.t1)
    print(json.dumps({"schedule": sched.to_dict(), "plan": plan.to_dict()}, indent=2))
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from . import fixtures

    makers = {
        "icosphere": lambda: fixtures.make_icosphere(args.subdivisions),
        "uvsphere": lambda: fixtures.make_uv_sphere(args.stacks, args.slices),
        "cube": fixtures.make_cube,
        "quad": fixtures.make_quad,
    }
    mesh = makers[args.kind]()
    out = Path(args.out)
    if args.texture:
        tex_path = Path(args.texture)
        save_png(fixtures.checker_gradient(args.resolution), tex_path)
        save_obj(mesh, out, texture_png=tex_path.name)
    else:
        save_obj(mesh, out)
    logger.info("wrote %s (%d faces)", out, mesh.n_faces)
    return EXIT_OK


def cmd_mock_server(args) -> int:
    from .mockserver import MockBehavior, MockServer

    srv = MockServer(MockBehavior(args.fail_first, wrong_size=args.wrong_size), port=args.port)
    print(f"serving on http://127.0.0.1:{args.port}/generate", file=sys.stderr)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="texro", description="Texture optimization for UV-mapped meshes.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("select-views", help="choose a minimal covering set of viewpoints")
    s.add_argument("mesh")
    s.add_argument("--candidates", "-K", type=_positive_int, default=8192)
    s.add_argument("--radius-min", type=float, default=1.0)
    s.add_argument("--radius-max", type=float, default=1.4)
    s.add_argument("--max-angle", type=float, default=45.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="report path (default: stdout)")
    s.set_defaults(func=cmd_select_views)

    s = sub.add_parser("run", help="run the full texture optimization")
    s.add_argument("config", help="INI run configuration")
    s.add_argument("--denoiser", choices=DENOISER_KINDS)
    s.add_argument("--override", "-o", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--out-dir", default="texro_out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("render", help="render a textured mesh from one pose")
    s.add_argument("mesh")
    s.add_argument("texture")
    s.add_argument("--azimuth", type=float, default=0.0)
    s.add_argument("--elevation", type=float, default=90.0, help="polar angle from +Z in degrees")
    s.add_argument("--radius", type=float, default=2.5)
    s.add_argument("--fov", type=float, default=50.0)
    s.add_argument("--size", type=_positive_int, default=512)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("inspect-schedule", help="print alpha-bar tables and the step plan as JSON")
    s.add_argument("--config")
    s.add_argument("--override", "-o", action="append", metavar="SECTION.KEY=VALUE")
    s.set_defaults(func=cmd_inspect_schedule)

    s = sub.add_parser("make-fixture", help="write a procedural test mesh")
    s.add_argument("kind", choices=("icosphere", "uvsphere", "cube", "quad"))
    s.add_argument("--subdivisions", type=int, default=5)
    s.add_argument("--stacks", type=int, default=21)
    s.add_argument("--slices", type=int, default=24)
    s.add_argument("--texture", help="also write a checker/gradient texture PNG here")
    s.add_argument("--resolution", type=_positive_int, default=1552)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_fixture)

    s = sub.add_parser("mock-server", help="serve the remote denoiser protocol locally")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--fail-first", type=int, default=0)
    s.add_argument("--wrong-size", action="store_true")
    s.set_defaults(func=cmd_mock_server)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except TexroError as exc:
        print(f"texro: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"texro: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"texro: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
