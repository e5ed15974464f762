"""Compare the numba kernels against the pure NumPy fallbacks.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Each kernel runs once per path as a warm-up (so JIT compilation is not
timed), then ``--repeat`` times; the best wall time is reported. Outputs of
the two paths are compared so a speedup never hides a divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from texro._accel import ENV_FLAG
from texro.fixtures import checker_gradient, make_icosphere, make_uv_sphere
from texro.geometry import Camera
from texro.raster import UvTexture, build_texel_table, project_to_texture, rasterize
from texro.viewselect import compute_visibility, greedy_cover, sample_candidates

log = logging.getLogger("bench")


@dataclass
class Case:
    name: str
    fn: Callable[[], object]
    same: Callable[[object, object], bool]


def _timed(fn: Callable[[], object], repeat: int) -> tuple[float, object]:
    out = fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _run_path(fn: Callable[[], object], pure_numpy: bool, repeat: int) -> tuple[float, object]:
    old = os.environ.get(ENV_FLAG)
    os.environ[ENV_FLAG] = "1" if pure_numpy else "0"
    try:
        return _timed(fn, repeat)
    finally:
        if old is None:
            os.environ.pop(ENV_FLAG, None)
        else:
            os.environ[ENV_FLAG] = old


def build_cases(quick: bool) -> list[Case]:
    uv = make_uv_sphere()
    R = 460 if quick else 690
    size = 512 if quick else 1024
    tex = UvTexture.from_rgb(checker_gradient(R))
    cam = Camera(30.0, 60.0, 1.8, 50.0, size)
    table = build_texel_table(uv, R)
    fb = rasterize(uv, tex, cam)
    ico = make_icosphere(3 if quick else 4)
    cands = sample_candidates(1024, seed=0)
    vis = compute_visibility(ico, cands)
    return [
        Case(f"rasterize {size}px", lambda: rasterize(uv, tex, cam),
             lambda a, b: np.array_equal(a.face_id, b.face_id)
             and np.allclose(a.depth[a.coverage], b.depth[b.coverage], rtol=1e-12)),
        Case(f"texel table R={R}", lambda: build_texel_table(uv, R).face_id,
             lambda a, b: np.array_equal(a, b)),
        Case(f"projection R={R}", lambda: project_to_texture(fb.color, fb, table, cam, UvTexture.blank(R), uv).rgb,
             lambda a, b: np.allclose(a, b, atol=1e-6)),
        Case(f"visibility {ico.n_faces}x{len(cands)}", lambda: compute_visibility(ico, cands).bits,
             lambda a, b: (a != b).sum() <= 1e-4 * a.size),
        Case(f"greedy cover {ico.n_faces}x{len(cands)}", lambda: greedy_cover(vis).covered_faces,
             lambda a, b: np.array_equal(a, b)),
    ]


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    print(f"{'kernel':34s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}  agree", flush=True)
    for case in build_cases(args.quick):
        t_nb, out_nb = _run_path(case.fn, False, args.repeat)
        t_np, out_np = _run_path(case.fn, True, args.repeat)
        agree = case.same(out_nb, out_np)
        print(f"{case.name:34s} {t_nb:9.4f} {t_np:9.4f} {t_np / t_nb:7.1f}x  {agree}", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
