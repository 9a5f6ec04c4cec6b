"""Per-window statistical features and the embedding max-aggregation step."""

from __future__ import annotations

import math

import numpy as np

from bsmkit.model import BsmWindow, ToolkitError


class WindowTooSmall(ToolkitError):
    """Feature extraction needs at least 2 records."""


class EmptyInput(ToolkitError):
    """Aggregation over zero rows."""


FEATURE_NAMES = (
    "spd_mean",
    "spd_std",
    "gap_mean",
    "gap_std",
    "resid_mean",
    "resid_std",
    "distinct_pos_ratio",
    "acl_mean",
    "acl_std",
    "hed_change_mean",
    "gap_min",
    "gap_max",
)


def extract_features(w: BsmWindow) -> np.ndarray:
    """12 per-window statistics capturing the attack signatures.

    Speed and acceleration moments catch frozen fields, inter-arrival gaps
    catch rate attacks, the displacement residual |dist - spd*dt| catches
    position/speed inconsistency, and the distinct-position ratio catches
    frozen positions. Stddevs are population stddevs.
    """
    n = len(w.records)
    if n < 2:
        raise WindowTooSmall(f"{n} records, need at least 2")
    recs = w.records
    spd = np.array([r.spd for r in recs])
    acl = np.array([r.acl for r in recs])
    times = np.array([r.rcv_time for r in recs])
    gaps = np.diff(times)

    resid = np.empty(n - 1)
    hed_change = np.empty(n - 1)
    for i in range(n - 1):
        dist = math.hypot(recs[i + 1].pos_x - recs[i].pos_x, recs[i + 1].pos_y - recs[i].pos_y)
        resid[i] = abs(dist - recs[i].spd * gaps[i])
        hed_change[i] = math.hypot(
            recs[i + 1].hed_x - recs[i].hed_x, recs[i + 1].hed_y - recs[i].hed_y
        )
    distinct_ratio = len({(r.pos_x, r.pos_y) for r in recs}) / n

    return np.array(
        [
            spd.mean(),
            spd.std(),
            gaps.mean(),
            gaps.std(),
            resid.mean(),
            resid.std(),
            distinct_ratio,
            acl.mean(),
            acl.std(),
            hed_change.mean(),
            gaps.min(),
            gaps.max(),
        ]
    )


def extract_feature_matrix(windows: list[BsmWindow]) -> np.ndarray:
    return np.stack([extract_features(w) for w in windows])


def max_aggregate(token_embeddings: np.ndarray) -> np.ndarray:
    """Elementwise maximum over the token axis of an (n_tokens, dim) matrix."""
    arr = np.asarray(token_embeddings, dtype=float)
    if arr.ndim != 2:
        raise EmptyInput(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyInput("no token embeddings to aggregate")
    return arr.max(axis=0)
