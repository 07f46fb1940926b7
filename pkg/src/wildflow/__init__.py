"""wildflow: a numerical convex-integration laboratory for 2-D compressible
Euler with rotation/damping source terms."""

__version__ = "0.1.0"
