"""Two-stage texture optimization.

Stage 1 projects six fixed views into a coarse texture. Stage 2 sweeps the
selected views ``N`` times; each sweep renders the current texture,
re-noises it by region, denoises it, projects it back, and finally
upsamples the texture for the next sweep.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import PipelineConfig
from .denoise import (
    DenoiseContext,
    Denoiser,
    ProceduralDenoiser,
    RemoteDenoiser,
    RetryPolicy,
    TextureOracle,
    denoise_region_aware,
    prompt_augment,
)
from .errors import ConfigError, EmptyProjection, TexroError, ZeroSelectedViews
from .fixtures import checker_gradient
from .geometry import Camera, TriangleMesh, load_mesh, normalize_mesh, save_obj
from .raster import (
    TexelSurfaceTable,
    UvTexture,
    build_texel_table,
    dilate_written,
    load_texture,
    normalized_depth,
    overlap_mask,
    project_to_texture,
    rasterize,
    save_png,
    upsample,
)
from .schedule import NoiseSchedule, StepPlan, build_schedule
from .viewselect import SelectedViews, VisibilityMatrix, compute_visibility, greedy_cover, sample_candidates

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "TEXRO_REMOTE_ENDPOINT"
# (azimuth, polar angle) of the initialization views
INIT_POSES = ((30.0, 60.0), (90.0, 110.0), (150.0, 60.0), (210.0, 110.0), (270.0, 60.0), (330.0, 110.0))
PREVIEW_POSES = ((0.0, 80.0), (120.0, 100.0), (240.0, 80.0), (45.0, 30.0))


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000.0, 3)


def strip_timings(obj):
    """Copy of a report with every ``*_ms`` field removed."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if not k.endswith("_ms")}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def auto_radius(mesh: TriangleMesh, fov_y: float, margin: float = 1.1) -> float:
    """Distance at which the mesh bounding sphere fits the vertical field of view."""
    return margin * mesh.bounding_radius / math.sin(math.radians(fov_y) / 2.0)


def view_seed(seed: int, step: int, view: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(step), int(view)])


class TableCache:
    """Texel tables keyed by resolution (building one costs a UV-space raster pass)."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        self._tables: dict[int, TexelSurfaceTable] = {}

    def __call__(self, resolution: int) -> TexelSurfaceTable:
        if resolution not in self._tables:
            self._tables[resolution] = build_texel_table(self.mesh, resolution)
        return self._tables[resolution]


# ------------------------------------------------------------------- stage 1


def stage1_init(
    mesh: TriangleMesh,
    prompt: str,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    *,
    resolution: int = 307,
    render_size: int = 512,
    fov_y: float = 50.0,
    radius: float | None = None,
    seed: int = 0,
    tables: TableCache | None = None,
    blend: str = "overwrite",
    log: list | None = None,
) -> UvTexture:
    """Project the six initialization views into a blank texture.

    Raises:
        EmptyProjection: no texel passed the visibility and angle tests.
    """
    tables = tables or TableCache(mesh)
    table = tables(resolution)
    radius = radius or auto_radius(mesh, fov_y)
    tex = UvTexture.blank(resolution)
    for k, (az, el) in enumerate(INIT_POSES):
        t0 = time.perf_counter()
        cam = Camera(az, el, radius, fov_y, render_size)
        fb = rasterize(mesh, None, cam)
        s = int(view_seed(seed, 0, k).generate_state(1)[0])
        ctx = DenoiseContext(prompt_augment(prompt, az), normalized_depth(fb.depth), az, s, sched.reduced_steps, cam)
        img = denoiser.init_image(ctx)
        before = int(tex.written.sum())
        project_to_texture(img, fb, table, cam, tex, mesh, blend=blend, inplace=True)
        if log is not None:
            log.append({"pose": k, "camera": cam.to_dict(), "prompt": ctx.prompt,
                        "covered_px": int(fb.coverage.sum()), "new_texels": int(tex.written.sum()) - before,
                        "wall_ms": _ms(t0)})
    if not tex.written.any():
        raise EmptyProjection("no texel is visible from the six initialization views")
    tex.clear_fresh()
    return tex


# ------------------------------------------------------------------- stage 2


def angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    return math.acos(max(-1.0, min(1.0, float(np.dot(a, b)))))


def order_views(directions: np.ndarray, areas: np.ndarray) -> list[int]:
    """Greedy nearest-neighbour tour over view directions.

    Starts at the view with the largest covered area and repeatedly moves
    to the closest unvisited view by angle; ties go to the lower index.

    Returns:
        Positions into ``directions`` in visiting order.
    """
    d = np.asarray(directions, dtype=np.float64)
    n = len(d)
    if n == 0:
        raise ZeroSelectedViews("no views to order")
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    areas = np.asarray(areas, dtype=np.float64)
    cur = int(np.argmax(areas))  # argmax keeps the first maximum
    order = [cur]
    left = np.ones(n, bool)
    left[cur] = False
    for _ in range(n - 1):
        ang = np.arccos(np.clip(d[left] @ d[cur], -1.0, 1.0))
        cur = int(np.flatnonzero(left)[np.argmin(ang)])
        order.append(cur)
        left[cur] = False
    return order


def tour_length(directions: np.ndarray, order: list[int]) -> float:
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return sum(angular_distance(d[a], d[b]) for a, b in zip(order, order[1:]))


@dataclass
class RunState:
    """Mutable state of stage 2.

    ``n`` counts completed steps, so the texture is at
    ``plan.resolutions[min(n, N - 1)]``.
    """

    mesh: TriangleMesh
    texture: UvTexture
    views: list[Camera]
    plan: StepPlan
    prompt: str = ""
    seed: int = 0
    n: int = 0
    blend: str = "overwrite"
    dilate_seams: bool = False
    logs: list = field(default_factory=list)
    tables: TableCache | None = None

    def __post_init__(self):
        if self.tables is None:
            self.tables = TableCache(self.mesh)


def stage2_step(
    state: RunState,
    sched: NoiseSchedule,
    denoiser: Denoiser,
    on_step: Callable[[int, UvTexture], None] | None = None,
) -> RunState:
    """Run one refinement sweep over all views, then upsample if more steps follow.

    ``on_step`` sees the texture after the sweep and before upsampling.
    """
    if not state.views:
        raise ZeroSelectedViews("stage 2 needs at least one view")
    n = state.n + 1
    if n > state.plan.N:
        raise ValueError(f"all {state.plan.N} steps already done")
    entry = state.plan.entry(n)
    tex = state.texture
    if tex.resolution != entry.resolution:
        raise ValueError(f"texture at {tex.resolution}, step {n} expects {entry.resolution}")
    table = state.tables(tex.resolution)
    tex.clear_fresh()
    t_step = time.perf_counter()
    views_log = []
    for k, cam in enumerate(state.views):
        t0 = time.perf_counter()
        fb = rasterize(state.mesh, tex, cam)
        mask, uninit = overlap_mask(fb, tex)
        ss = view_seed(state.seed, n, k)
        rng = np.random.default_rng(ss)
        ctx = DenoiseContext(prompt_augment(state.prompt, cam.azimuth), normalized_depth(fb.depth), cam.azimuth,
                             int(ss.generate_state(1)[0]), entry.t_n, cam)
        img = denoise_region_aware(fb.color, mask, ctx, entry, sched, denoiser, rng,
                                   coverage=fb.coverage, uninitialized=uninit)
        before = int(tex.fresh.sum())
        project_to_texture(img, fb, table, cam, tex, state.mesh, blend=state.blend, inplace=True)
        views_log.append({
            "view": k,
            "overlap_px": int(mask.sum()),
            "non_overlap_px": int((fb.coverage & ~mask).sum()),
            "uninitialized_px": int(uninit.sum()),
            "fresh_texels": int(tex.fresh.sum()) - before,
            "wall_ms": _ms(t0),
        })
    filled = dilate_written(tex) if state.dilate_seams else 0
    owned = table.face_id >= 0
    state.logs.append({
        "n": n, "resolution": entry.resolution, "t_n": entry.t_n, "t1": entry.t1, "t2": entry.t2,
        "coverage": float((tex.written & owned).sum() / max(owned.sum(), 1)),
        "dilated_texels": filled,
        "views": views_log,
        "wall_ms": _ms(t_step),
    })
    logger.info("step %d/%d at %d^2: %d views", n, state.plan.N, entry.resolution, len(state.views))
    if on_step is not None:
        on_step(n, tex)
    if n < state.plan.N:
        state.texture = upsample(tex, state.plan.resolutions[n])
    state.n = n
    return state


# ------------------------------------------------------------------------ run


@dataclass
class RunResult:
    texture: UvTexture
    report: dict
    mesh: TriangleMesh
    views: list[Camera]


class PipelineFailure(TexroError):
    """Wraps the error that aborted a run together with the partial report."""

    def __init__(self, cause: TexroError, report: dict):
        super().__init__(str(cause))
        self.cause = cause
        self.report = report
        self.exit_code = cause.exit_code


def make_denoiser(cfg: PipelineConfig, mesh: TriangleMesh) -> Denoiser:
    final_res = StepPlan(cfg.N, cfg.base_resolution, cfg.upsample_factor, cfg.slope, cfg.t1).resolutions[-1]
    if cfg.denoiser == "oracle":
        tex = load_texture(cfg.oracle_texture) if cfg.oracle_texture else UvTexture.from_rgb(checker_gradient(final_res))
        return TextureOracle(mesh, tex)
    if cfg.denoiser == "procedural":
        return ProceduralDenoiser(mesh, cfg.pattern_seed, resolution=final_res)
    endpoint = os.environ.get(ENDPOINT_ENV) or cfg.endpoint
    if not endpoint:
        raise ConfigError(f"remote denoiser needs denoiser.endpoint or ${ENDPOINT_ENV}")
    return RemoteDenoiser(endpoint, RetryPolicy(cfg.retries, cfg.backoff_s, cfg.timeout_s))


def select_views(mesh: TriangleMesh, cfg: PipelineConfig) -> tuple[SelectedViews, np.ndarray, VisibilityMatrix, dict]:
    """Candidate sampling, visibility and greedy cover.

    Returns:
        Selected views, all candidate positions, the visibility matrix and a report.
    """
    t0 = time.perf_counter()
    cands = sample_candidates(cfg.candidates, cfg.radius_min, cfg.radius_max, cfg.seed)
    vis = compute_visibility(mesh, cands, cfg.max_angle_deg)
    t_vis = _ms(t0)
    sel = greedy_cover(vis)
    report = {
        "candidates": len(cands),
        "skipped_inside": len(vis.skipped),
        "selected": len(sel),
        "indices": list(sel.indices),
        "new_face_counts": list(sel.new_face_counts),
        "coverage_area_fraction": sel.coverage_area_fraction,
        "uncoverable_faces": int(len(sel.uncoverable)),
        "visibility_ms": t_vis,
        "wall_ms": _ms(t0),
    }
    return sel, cands.positions, vis, report


def run(
    cfg: PipelineConfig,
    mesh: TriangleMesh | None = None,
    denoiser: Denoiser | None = None,
    on_step: Callable[[int, UvTexture], None] | None = None,
) -> RunResult:
    """Load, select views, initialize, refine ``N`` times.

    Raises:
        PipelineFailure: carrying the underlying error and a report of the
            phases that completed.
    """
    t_run = time.perf_counter()
    report: dict = {"status": "running", "phases_completed": [], "config": cfg.to_dict()}
    phases = report["phases_completed"]
    try:
        t0 = time.perf_counter()
        if mesh is None:
            if not cfg.mesh_path:
                raise ConfigError("mesh.path is not set")
            mesh = load_mesh(cfg.mesh_path)
        mesh = normalize_mesh(mesh)
        report["mesh"] = {"faces": mesh.n_faces, "vertices": len(mesh.vertices), "load_ms": _ms(t0)}
        phases.append("load")

        sched = build_schedule(cfg.T_full, cfg.beta_start, cfg.beta_end, cfg.reduced_steps)
        plan = StepPlan(cfg.N, cfg.base_resolution, cfg.upsample_factor, cfg.slope, cfg.t1)
        plan.entries()  # validates every step up front
        report["schedule"] = {**sched.to_dict(), "plan": plan.to_dict()}
        denoiser = denoiser or make_denoiser(cfg, mesh)

        sel, positions, vis, vs_report = select_views(mesh, cfg)
        if len(sel) == 0:
            raise ZeroSelectedViews("view selection returned no views")
        chosen = positions[list(sel.indices)]
        seen_area = [float(mesh.face_areas[vis.column(c)].sum()) for c in sel.indices]
        tour = order_views(chosen, seen_area)
        views = [Camera.from_position(chosen[i], cfg.fov_y, cfg.render_size) for i in tour]
        vs_report["order"] = [int(sel.indices[i]) for i in tour]
        vs_report["cameras"] = [c.to_dict() for c in views]
        report["view_selection"] = vs_report
        phases.append("select_views")

        t0 = time.perf_counter()
        tables = TableCache(mesh)
        radius = None if cfg.init_radius == "auto" else float(cfg.init_radius)
        init_log: list = []
        tex = stage1_init(mesh, cfg.prompt, denoiser, sched, resolution=plan.resolutions[0],
                          render_size=cfg.render_size, fov_y=cfg.fov_y, radius=radius, seed=cfg.seed,
                          tables=tables, blend=cfg.blend, log=init_log)
        report["stage1"] = {"resolution": tex.resolution, "texels_written": int(tex.written.sum()),
                            "views": init_log, "wall_ms": _ms(t0)}
        phases.append("stage1")

        state = RunState(mesh, tex, views, plan, cfg.prompt, cfg.seed, blend=cfg.blend,
                         dilate_seams=cfg.dilate_seams, tables=tables)
        report["steps"] = state.logs
        for _ in range(plan.N):
            stage2_step(state, sched, denoiser, on_step)
            phases.append(f"step_{state.n}")
        owned = tables(state.texture.resolution).face_id >= 0
        report["coverage_fraction"] = float((state.texture.written & owned).sum() / max(owned.sum(), 1))
        report["final_resolution"] = state.texture.resolution
        report["denoiser"] = denoiser.describe()
        report["status"] = "ok"
        report["wall_ms"] = _ms(t_run)
        return RunResult(state.texture, report, mesh, views)
    except TexroError as exc:
        report["status"] = "failed"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if denoiser is not None:
            report["denoiser"] = denoiser.describe()
        if hasattr(exc, "attempts"):
            report["error"]["attempts"] = exc.attempts
            report["error"]["retry_events"] = exc.retry_events
        report["wall_ms"] = _ms(t_run)
        raise PipelineFailure(exc, report) from exc


# --------------------------------------------------------------------- export


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def export(result: RunResult, out_dir: str | Path, fov_y: float = 50.0, render_size: int = 512) -> dict:
    """Write texture.png, mesh.obj/.mtl, preview_0..3.png and report.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(result.texture.rgb, out / "texture.png")
    save_obj(result.mesh, out / "mesh.obj", texture_png="texture.png")
    radius = auto_radius(result.mesh, fov_y)
    for k, (az, el) in enumerate(PREVIEW_POSES):
        fb = rasterize(result.mesh, result.texture, Camera(az, el, radius, fov_y, render_size))
        save_png(fb.color, out / f"preview_{k}.png")
    files = ["texture.png", "mesh.obj", "mesh.mtl"] + [f"preview_{k}.png" for k in range(len(PREVIEW_POSES))]
    result.report["outputs"] = files + ["report.json"]
    result.report["phases_completed"].append("export")
    write_report(result.report, out / "report.json")
    return result.report
