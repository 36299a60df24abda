"""Inverse rendering with PBR-parameterized 3D Gaussians.

The package fits a set of oriented Gaussians with physically based material
parameters, an environment light, and a per-Gaussian indirect radiance field
to posed multi-view images. The fitted scene can be re-rendered from novel
views, relit under new environment maps, and material-edited, either through
the command line or the bundled HTTP service.
"""

import os

import torch

__version__ = "0.1.0"

# Cap intra-op threads before any heavy op runs so results are reproducible
# across invocations that set the same value.
_threads = os.environ.get("GIR_THREADS")
if _threads:
    torch.set_num_threads(max(1, int(_threads)))

from .scene import GaussianScene  # noqa: E402,F401
