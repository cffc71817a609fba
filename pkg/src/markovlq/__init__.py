"""markovlq: LQ synthesis for sampled-data systems with Markov-modulated delays.

The toolkit discretizes a continuous-time plant driven through a delayed
zero-order hold into a delay-parameterized jump-linear system, certifies
stochastic stabilizability/detectability with gridded LMIs, solves the
grid-coupled Riccati recursion for the optimal delay-dependent gain, and
validates controllers by Monte Carlo closed-loop simulation with
continuous-time cost accounting.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConsistencyError,
    DomainError,
    NotConvergedError,
    NotPsdError,
    ResourceLimitError,
    ToolkitError,
)
from .kernels import Box, DelayKernel, DensityKernel, DiracKernel, TruncNormalAvgKernel, UniformKernel
from .plant import JumpSystemMaps, Plant

__all__ = [
    "Plant",
    "JumpSystemMaps",
    "Box",
    "DelayKernel",
    "UniformKernel",
    "TruncNormalAvgKernel",
    "DiracKernel",
    "DensityKernel",
    "ToolkitError",
    "DomainError",
    "NotPsdError",
    "ConsistencyError",
    "NotConvergedError",
    "ResourceLimitError",
    "ConfigError",
    "__version__",
]
