"""Worker-pool sizing shared by the data-parallel regions.

Parallelism never changes results: FFT batches and per-block evaluations are
independent, and all reductions keep a fixed traversal order.
"""

import os

_threads = None


def set_threads(k):
    global _threads
    _threads = None if k is None else max(1, int(k))


def get_threads():
    if _threads is None:
        return max(1, os.cpu_count() or 1)
    return _threads
