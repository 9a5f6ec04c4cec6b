"""Toolkit for vehicular misbehavior detection over basic safety messages.

Pipeline stages: trace parsing -> preprocessing/windowing -> prompt
textualization -> classification (stub, oracle, native baseline, or a
remote model server) -> evaluation, plus a synthetic attack trace
generator and a discrete-event simulator of the RSU/trust-authority
detection architecture.
"""

from bsmkit.model import (
    AttackClass,
    Bsm,
    BsmWindow,
    FineTuneManifest,
    ProcessedRecord,
    ToolkitError,
)

__version__ = "0.1.0"

__all__ = [
    "AttackClass",
    "Bsm",
    "BsmWindow",
    "FineTuneManifest",
    "ProcessedRecord",
    "ToolkitError",
    "__version__",
]
