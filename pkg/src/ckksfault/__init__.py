"""Desk-scale RNS-CKKS evaluation engine with a single-bit fault-injection
harness and checksum/DMR fault-tolerance modes."""

__version__ = "0.1.0"

from . import backends

KERNEL_BACKEND = backends.active.name
