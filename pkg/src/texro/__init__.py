"""Texture optimization for UV-mapped triangle meshes.

A coarse texture is initialized from six fixed views and then refined by
sweeping a minimal covering set of views at increasing texture
resolutions, re-noising each rendered view by region before denoising it
and projecting it back onto the texture.
"""

from __future__ import annotations

from .config import PipelineConfig
from .errors import TexroError
from .geometry import Camera, TriangleMesh, load_mesh, normalize_mesh
from .pipeline import run
from .raster import UvTexture, rasterize

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "PipelineConfig",
    "TexroError",
    "TriangleMesh",
    "UvTexture",
    "__version__",
    "load_mesh",
    "normalize_mesh",
    "rasterize",
    "run",
]
