"""Denoiser boundary: noise prediction, region-aware refinement and the remote client.

Every denoiser answers one question, "what noise is in ``x_t`` at reduced
step ``t``?". Local denoisers know a clean target image and invert the
forward-diffusion identity; the remote client asks an HTTP service for a
clean estimate and inverts the same identity, so the DDIM loop always
runs locally.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import math
import socket
import time
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image

from .errors import RemoteBadResponse, RemoteUnavailable, ScheduleError, ShapeMismatch
from .fixtures import seeded_pattern
from .geometry import Camera, TriangleMesh
from .raster import UvTexture, quantize_depth, rasterize, to_uint8
from .schedule import NoiseSchedule, PlanEntry, adaptive_noise, ddim_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenoiseContext:
    """Conditioning for one view.

    Attributes:
        prompt: Text prompt, already augmented for the view direction.
        depth: (H, W) normalized depth in [0, 1] (quantized to 16 bits on the wire).
        view_azimuth: Camera azimuth in degrees.
        seed: Per-view seed forwarded to stochastic services.
        t_start: Reduced timestep the DDIM chain starts from.
        camera: Camera of the view; local denoisers render their target through it.
    """

    prompt: str
    depth: np.ndarray
    view_azimuth: float
    seed: int
    t_start: int
    camera: Camera | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape[:2]


def _check_image(x: np.ndarray, ctx: DenoiseContext) -> None:
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeMismatch(f"expected an (H, W, 3) image, got {x.shape}")
    if x.shape[:2] != ctx.size:
        raise ShapeMismatch(f"image {x.shape[:2]} does not match depth {ctx.size}")


def eps_from_x0(x_t: np.ndarray, x0: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Invert ``x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`` for ``eps``."""
    if x_t.shape != x0.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} vs clean estimate {x0.shape}")
    if not 1 <= t <= sched.reduced_steps:
        raise ScheduleError(f"t={t} outside [1, {sched.reduced_steps}]")
    ab = sched.alpha_bar(t)
    dt = x_t.dtype.type
    return (x_t - dt(math.sqrt(ab)) * x0.astype(x_t.dtype, copy=False)) / dt(math.sqrt(1.0 - ab))


class Denoiser(ABC):
    """Pluggable noise predictor."""

    kind: str = "abstract"

    @abstractmethod
    def init_image(self, ctx: DenoiseContext) -> np.ndarray:
        """Image for a blank texture (initialization views)."""

    @abstractmethod
    def predict_noise(self, x_t: np.ndarray, t: int, ctx: DenoiseContext, sched: NoiseSchedule) -> np.ndarray:
        """Noise estimate for ``x_t`` at reduced step ``t``."""

    def describe(self) -> dict:
        return {"kind": self.kind}


class ImageOracle(Denoiser):
    """Oracle with one fixed clean target image."""

    kind = "oracle"

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target)

    def init_image(self, ctx: DenoiseContext) -> np.ndarray:
        _check_image(self.target, ctx)
        return self.target.astype(np.float32)

    def predict_noise(self, x_t, t, ctx, sched):
        _check_image(x_t, ctx)
        if self.target.shape != x_t.shape:
            raise ShapeMismatch(f"oracle target {self.target.shape} vs x_t {x_t.shape}")
        return eps_from_x0(x_t, self.target, t, sched)


class TextureOracle(Denoiser):
    """Oracle whose target for each view is a render of a known texture."""

    kind = "oracle"

    def __init__(self, mesh: TriangleMesh, texture: UvTexture):
        self.mesh = mesh
        self.texture = texture
        self._cache: tuple[Camera, np.ndarray] | None = None

    def target(self, ctx: DenoiseContext) -> np.ndarray:
        if ctx.camera is None:
            raise ValueError("texture oracle needs the view camera in the context")
        if self._cache is None or self._cache[0] != ctx.camera:
            self._cache = (ctx.camera, rasterize(self.mesh, self.texture, ctx.camera).color)
        return self._cache[1]

    def init_image(self, ctx):
        return self.target(ctx).copy()

    def predict_noise(self, x_t, t, ctx, sched):
        _check_image(x_t, ctx)
        return eps_from_x0(x_t, self.target(ctx), t, sched)

    def describe(self):
        return {"kind": self.kind, "texture_resolution": self.texture.resolution}


class ProceduralDenoiser(TextureOracle):
    """Oracle against a seeded procedural pattern; a stand-in for a generative model."""

    kind = "procedural"

    def __init__(self, mesh: TriangleMesh, seed: int = 0, resolution: int = 512, squares: int = 8):
        super().__init__(mesh, UvTexture.from_rgb(seeded_pattern(resolution, seed, squares)))
        self.seed = seed
        self.squares = squares

    def describe(self):
        return {"kind": self.kind, "seed": self.seed, "squares": self.squares,
                "texture_resolution": self.texture.resolution}


def predict_noise(x_t: np.ndarray, t: int, ctx: DenoiseContext, kind: Denoiser, sched: NoiseSchedule) -> np.ndarray:
    if not 1 <= t <= sched.reduced_steps:
        raise ScheduleError(f"t={t} outside [1, {sched.reduced_steps}]")
    return kind.predict_noise(np.asarray(x_t), t, ctx, sched)


def denoise_region_aware(
    image: np.ndarray,
    overlap: np.ndarray,
    ctx: DenoiseContext,
    entry: PlanEntry,
    sched: NoiseSchedule,
    kind: Denoiser,
    rng: np.random.Generator,
    *,
    coverage: np.ndarray | None = None,
    uninitialized: np.ndarray | None = None,
) -> np.ndarray:
    """Re-noise a rendered view by region and run the deterministic DDIM chain.

    Overlap pixels are treated as content at noise level ``entry.t1`` and
    the rest as content at ``entry.t2``; both are lifted to ``entry.t_n``
    with one shared noise draw. Pixels over never-written texels count as
    non-overlap. Pixels outside ``coverage`` are returned unchanged.

    Returns:
        The refined image clipped to [0, 1], in the dtype of ``image``.
    """
    image = np.asarray(image)
    if overlap.shape != image.shape[:2]:
        raise ShapeMismatch(f"mask {overlap.shape} vs image {image.shape[:2]}")
    _check_image(image, ctx)
    if coverage is not None and not coverage.any():
        return image.copy()
    ov = overlap if uninitialized is None else overlap & ~uninitialized
    eps = rng.standard_normal(image.shape).astype(image.dtype, copy=False)
    x = np.where(
        ov[..., None],
        adaptive_noise(image, entry.t1, entry.t_n, eps, sched),
        adaptive_noise(image, entry.t2, entry.t_n, eps, sched),
    )
    for i in range(entry.t_n, 0, -1):
        x = ddim_step(x, predict_noise(x, i, ctx, kind, sched), i, 0.0, None, sched)
    out = np.clip(x, 0.0, 1.0)
    if coverage is not None:
        out = np.where(coverage[..., None], out, image)
    return out.astype(image.dtype, copy=False)


def prompt_augment(prompt: str, azimuth: float) -> str:
    """Append a coarse view-direction hint to ``prompt``."""
    if not 0.0 <= azimuth < 360.0:
        raise ValueError(f"azimuth {azimuth} outside [0, 360)")
    if azimuth <= 30.0 or azimuth >= 330.0:
        return f"{prompt}, front"
    if 30.0 < azimuth <= 150.0 or 210.0 <= azimuth < 330.0:
        return f"{prompt}, back"
    return prompt


# ------------------------------------------------------------------- remote


def encode_png(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    # uint16 (H, W) arrays become 16-bit grayscale, uint8 (H, W, 3) RGB
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(b64: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(b64, validate=True))) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.uint16)
        return np.asarray(im.convert("RGB"))


@dataclass(frozen=True)
class RemoteRequest:
    prompt: str
    mode: str  # "init" or "refine"
    depth: np.ndarray  # (H, W) in [0, 1]
    noise_level: int
    seed: int
    init_image: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.depth.shape[0]

    def payload(self) -> dict:
        body = {
            "prompt": self.prompt,
            "mode": self.mode,
            "depth_png_b64": encode_png(quantize_depth(self.depth)),
            "noise_level": int(self.noise_level),
            "seed": int(self.seed),
            "size": int(self.size),
        }
        if self.init_image is not None:
            body["init_image_png_b64"] = encode_png(to_uint8(self.init_image))
        return body


@dataclass
class RetryPolicy:
    retries: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 30.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def delay(self, attempt: int) -> float:
        return self.backoff_s * (2.0 ** (attempt - 1))


def _post(endpoint: str, body: bytes, timeout: float) -> bytes:
    req = urllib.request.Request(endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


def remote_generate(
    request: RemoteRequest,
    endpoint: str,
    policy: RetryPolicy | None = None,
    events: list | None = None,
) -> np.ndarray:
    """POST one generation request and decode the returned image.

    Connection failures, timeouts and 5xx responses are retried with
    exponential backoff up to ``policy.retries`` times. Each retry is
    logged and appended to ``events``.

    Returns:
        (size, size, 3) float32 image in [0, 1].

    Raises:
        RemoteUnavailable: the service could not be reached within the retry budget.
        RemoteBadResponse: a 4xx status, or a reply that is not a valid image of the requested size.
    """
    policy = policy or RetryPolicy()
    body = json.dumps(request.payload()).encode("utf-8")
    local: list[dict] = []
    attempt = 0
    while True:
        attempt += 1
        try:
            raw = _post(endpoint, body, policy.timeout_s)
            break
        except urllib.error.HTTPError as exc:
            if exc.code < 500:
                raise RemoteBadResponse(f"{endpoint} answered {exc.code}", attempts=attempt, retry_events=local) from exc
            reason = f"HTTP {exc.code}"
        except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError) as exc:
            reason = f"{type(exc).__name__}: {getattr(exc, 'reason', exc)}"
        if attempt > policy.retries:
            raise RemoteUnavailable(
                f"{endpoint} unavailable after {attempt} attempts ({reason})", attempts=attempt, retry_events=local
            )
        delay = policy.delay(attempt)
        event = {"attempt": attempt, "reason": reason, "delay_s": delay}
        local.append(event)
        if events is not None:
            events.append(event)
        logger.warning("remote denoiser attempt %d failed (%s); retrying in %.2fs", attempt, reason, delay)
        policy.sleep(delay)
    try:
        reply = json.loads(raw)
        img = decode_png(reply["image_png_b64"])
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise RemoteBadResponse(f"undecodable reply from {endpoint}: {exc}", attempts=attempt, retry_events=local) from exc
    if img.shape != (request.size, request.size, 3):
        raise RemoteBadResponse(
            f"reply image {img.shape} does not match requested size {request.size}", attempts=attempt, retry_events=local
        )
    return img.astype(np.float32) / 255.0


class RemoteDenoiser(Denoiser):
    """Client for a depth-conditioned generation service.

    Each DDIM step sends the current noisy image in ``refine`` mode and
    converts the returned clean estimate into a noise estimate.
    """

    kind = "remote"

    def __init__(self, endpoint: str, policy: RetryPolicy | None = None):
        self.endpoint = endpoint
        self.policy = policy or RetryPolicy()
        self.retry_events: list[dict] = []
        self.calls = 0

    def _call(self, req: RemoteRequest) -> np.ndarray:
        self.calls += 1
        return remote_generate(req, self.endpoint, self.policy, self.retry_events)

    def init_image(self, ctx):
        return self._call(RemoteRequest(ctx.prompt, "init", ctx.depth, ctx.t_start, ctx.seed))

    def predict_noise(self, x_t, t, ctx, sched):
        _check_image(x_t, ctx)
        x0 = self._call(RemoteRequest(ctx.prompt, "refine", ctx.depth, t, ctx.seed, np.clip(x_t, 0.0, 1.0)))
        return eps_from_x0(x_t, x0, t, sched)

    def describe(self):
        return {"kind": self.kind, "endpoint": self.endpoint, "retries": self.policy.retries,
                "timeout_s": self.policy.timeout_s, "calls": self.calls, "retry_events": list(self.retry_events)}
