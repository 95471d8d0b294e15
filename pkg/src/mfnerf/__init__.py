"""Manhattan-prior self-supervision for a differentiable voxel radiance field.

Explicit surface normals from pixel-triplet rays, robust Manhattan-frame
recovery by spherical clustering, and cluster/orthogonality losses, all
exercised end to end on procedurally generated synthetic rooms.
"""

from .kernels import HAVE_CYTHON, available_backends

__version__ = "0.1.0"
__all__ = ["HAVE_CYTHON", "available_backends", "__version__"]
