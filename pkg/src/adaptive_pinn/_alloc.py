"""glibc allocator tuning for many short-lived mid-sized numpy arrays."""

import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(threshold: int = 256 * 1024 * 1024) -> bool:
    """Keep freed blocks in the heap instead of returning them to the OS.

    Without this every temporary above 128 KiB is an mmap/munmap pair and
    the page faults dominate network evaluation time.  No-op off glibc.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    ok = libc.mallopt(_M_MMAP_THRESHOLD, threshold) == 1
    ok &= libc.mallopt(_M_TRIM_THRESHOLD, 2 * threshold) == 1
    return bool(ok)
