"""Reference oracles and interop utilities.

Generates cross-implementation fixtures (STFT, ESTOI, GCC-PHAT) on shared
WAVs and exports torch checkpoints into the portable weight-container
format consumed by the main toolkit. The reference computations here are
written independently of the main package on purpose: agreement between
the two is what the fixtures certify.
"""

__version__ = "0.1.0"
