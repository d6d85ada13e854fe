"""Reducibility and spectral tools for quasi-periodic sl(2,R) linear systems."""
import numba as _numba

# TBB in the base image is too old for numba; skip it instead of warning
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
