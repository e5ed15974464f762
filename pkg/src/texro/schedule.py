"""Diffusion noise schedules, DDIM stepping and the multi-resolution step plan.

Timesteps passed to the public functions are *reduced* indices
``0..reduced_steps``; index 0 is the clean boundary where alpha-bar is 1.
Coefficients are always computed in float64 and cast to the dtype of the
image arrays, so float64 inputs give a reference path and float32 inputs
the production path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleError, ShapeMismatch


@dataclass(frozen=True)
class NoiseSchedule:
    T_full: int
    betas: np.ndarray
    reduced_steps: int
    reduced_to_full: tuple[int, ...]
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.T_full,):
            raise ScheduleError("betas must have T_full entries")
        if not ((betas > 0) & (betas < 1)).all():
            raise ScheduleError("betas must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not (np.diff(alpha_bars) < 0).all():
            raise ScheduleError("alpha_bar must be strictly decreasing")
        r2f = tuple(int(x) for x in self.reduced_to_full)
        if len(r2f) != self.reduced_steps:
            raise ScheduleError("reduced_to_full needs one entry per reduced step")
        if any(b <= a for a, b in zip(r2f, r2f[1:])) or r2f[0] < 1 or r2f[-1] > self.T_full:
            raise ScheduleError("reduced_to_full must be strictly increasing within [1, T_full]")
        for name, val in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "reduced_to_full", r2f)

    def alpha_bar(self, t: int) -> float:
        """Alpha-bar at reduced index ``t`` (1.0 at the ``t=0`` boundary)."""
        if not 0 <= t <= self.reduced_steps:
            raise ScheduleError(f"reduced index {t} outside [0, {self.reduced_steps}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self.reduced_to_full[t - 1] - 1])

    def to_dict(self) -> dict:
        return {
            "T_full": self.T_full,
            "reduced_steps": self.reduced_steps,
            "reduced_to_full": list(self.reduced_to_full),
            "alpha_bar_reduced": [self.alpha_bar(t) for t in range(self.reduced_steps + 1)],
        }


def build_schedule(
    T_full: int = 1000,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    reduced_steps: int = 10,
) -> NoiseSchedule:
    """Linear beta ramp with a uniformly spaced reduced-step mapping."""
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T_full < 1 or not 1 <= reduced_steps <= T_full:
        raise ScheduleError("need T_full >= 1 and 1 <= reduced_steps <= T_full")
    betas = np.linspace(beta_start, beta_end, T_full, dtype=np.float64)
    r2f = tuple(int(math.floor(k * T_full / reduced_steps + 0.5)) for k in range(1, reduced_steps + 1))
    return NoiseSchedule(T_full, betas, reduced_steps, r2f)


def schedule_from_betas(betas, reduced_to_full=None) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    r2f = tuple(reduced_to_full) if reduced_to_full is not None else tuple(range(1, len(betas) + 1))
    return NoiseSchedule(len(betas), betas, len(r2f), r2f)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def _coef(x: np.ndarray, value: float):
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return dt.type(value)


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps`` at reduced index ``t >= 1``."""
    _check_pair(x0, eps)
    if not 1 <= t <= sched.reduced_steps:
        raise ScheduleError(f"t={t} outside [1, {sched.reduced_steps}]")
    ab = sched.alpha_bar(t)
    x0 = np.asarray(x0)
    return _coef(x0, math.sqrt(ab)) * x0 + _coef(x0, math.sqrt(1.0 - ab)) * np.asarray(eps)


def adaptive_noise(z: np.ndarray, t_from: int, t_to: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Diffuse ``z`` from noise level ``t_from`` up to ``t_to``.

    Uses the alpha-bar ratio ``ab(t_to) / ab(t_from)``. When the two levels
    are equal the input is returned unchanged (bit-exact copy).
    """
    _check_pair(z, eps)
    if t_from > t_to:
        raise ScheduleError(f"t_from={t_from} > t_to={t_to}: adaptive noise only adds noise")
    z = np.asarray(z)
    if t_from == t_to:
        return z.copy()
    ratio = sched.alpha_bar(t_to) / sched.alpha_bar(t_from)
    return _coef(z, math.sqrt(ratio)) * z + _coef(z, math.sqrt(1.0 - ratio)) * np.asarray(eps)


def ddim_step(
    x_i: np.ndarray,
    eps_pred: np.ndarray,
    i: int,
    sigma: float,
    eps: np.ndarray | None,
    sched: NoiseSchedule,
) -> np.ndarray:
    """One DDIM update from reduced index ``i`` to ``i - 1``."""
    _check_pair(x_i, eps_pred)
    if not 1 <= i <= sched.reduced_steps:
        raise ScheduleError(f"i={i} outside [1, {sched.reduced_steps}]")
    ab_i, ab_prev = sched.alpha_bar(i), sched.alpha_bar(i - 1)
    if sigma < 0 or sigma * sigma > 1.0 - ab_prev + 1e-15:
        raise ScheduleError(f"sigma={sigma} violates sigma^2 <= 1 - alpha_bar[{i - 1}]")
    x_i = np.asarray(x_i)
    eps_pred = np.asarray(eps_pred)
    x0_hat = (x_i - _coef(x_i, math.sqrt(1.0 - ab_i)) * eps_pred) / _coef(x_i, math.sqrt(ab_i))
    dir_coef = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
    out = _coef(x_i, math.sqrt(ab_prev)) * x0_hat + _coef(x_i, dir_coef) * eps_pred
    if sigma > 0:
        if eps is None:
            raise ScheduleError("sigma > 0 requires a noise sample")
        _check_pair(x_i, eps)
        out = out + _coef(x_i, sigma) * np.asarray(eps)
    return out


def step_timestep(n: int, slope: float = 2.5, floor: int = 5, ceil: int = 10) -> int:
    """Reduced timestep used at recursion step ``n``: ``max(ceil - slope*n, floor)``, rounded half up."""
    if n < 1:
        raise ScheduleError("step index n starts at 1")
    raw = max(ceil - slope * n, floor)
    return int(min(max(math.floor(raw + 0.5), floor), ceil))


def resolution_plan(base: int = 307, factor: float = 1.5, N: int = 5) -> list[int]:
    """Texture sizes per step: ``r[k+1] = floor(factor * r[k])``."""
    if base < 1 or not factor > 1 or N < 1:
        raise ScheduleError("need base >= 1, factor > 1, N >= 1")
    out = [int(base)]
    for _ in range(N - 1):
        out.append(int(math.floor(factor * out[-1])))
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ScheduleError(f"resolution plan not strictly increasing: {out}")
    return out


@dataclass(frozen=True)
class PlanEntry:
    n: int
    resolution: int
    t_n: int
    t1: int
    t2: int


@dataclass(frozen=True)
class StepPlan:
    N: int = 5
    base: int = 307
    upsample_factor: float = 1.5
    slope: float = 2.5
    t1: int = 2
    floor: int = 5
    ceil: int = 10

    @property
    def resolutions(self) -> list[int]:
        return resolution_plan(self.base, self.upsample_factor, self.N)

    def entry(self, n: int) -> PlanEntry:
        t_n = step_timestep(n, self.slope, self.floor, self.ceil)
        t2 = t_n - 1
        if not 1 <= self.t1 <= t_n:
            raise ScheduleError(f"t1={self.t1} must lie in [1, t_n={t_n}]")
        if t_n > self.t1 + 1 and not self.t1 < t2 < t_n:
            raise ScheduleError(f"need t1 < t2 < t_n, got {self.t1}, {t2}, {t_n}")
        return PlanEntry(n, self.resolutions[n - 1], t_n, self.t1, max(t2, self.t1))

    def entries(self) -> list[PlanEntry]:
        return [self.entry(n) for n in range(1, self.N + 1)]

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "resolutions": self.resolutions,
            "steps": [e.__dict__ for e in self.entries()],
            "slope": self.slope,
            "upsample_factor": self.upsample_factor,
        }
