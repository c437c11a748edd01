"""Weekly equal-count send-time bins ("virtual time").

One week of wall-clock time is cut into bins that each hold the same
number of observed sends, so dense weekday-daytime hours become many
narrow bins and dead night hours collapse into a few wide ones. Bins
are fit once on training sends and frozen.

Week offsets are anchored at Monday 00:00 UTC.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

WEEK_SECONDS = 604800
# first Monday 00:00 UTC after the epoch (1970-01-05)
_MONDAY_ANCHOR = 345600


class BinningError(ValueError):
    pass


def week_offset(ts) -> np.ndarray:
    """Seconds since the most recent Monday 00:00 UTC."""
    return np.asarray(np.mod(np.asarray(ts, dtype=np.int64) - _MONDAY_ANCHOR,
                             WEEK_SECONDS))


@dataclass(frozen=True)
class BinScheme:
    """bin_count+1 strictly increasing week-offset boundaries.

    boundaries[0] == 0 and boundaries[-1] == WEEK_SECONDS; bin b covers
    [boundaries[b], boundaries[b+1]) in week-offset space.
    """

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 3:
            raise BinningError("need at least 2 bins")
        if b[0] != 0 or b[-1] != WEEK_SECONDS:
            raise BinningError("boundaries must span [0, one week]")
        if np.any(np.diff(b) <= 0):
            raise BinningError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def bin_count(self) -> int:
        return self.boundaries.size - 1

    def to_json(self) -> str:
        return json.dumps({"anchor": "monday_utc",
                           "boundaries_s": self.boundaries.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "BinScheme":
        doc = json.loads(text)
        if doc.get("anchor") != "monday_utc":
            raise BinningError(f"unknown week anchor {doc.get('anchor')!r}")
        return cls(boundaries=np.array(doc["boundaries_s"]))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def fit_bins(send_times, bin_count: int = 100) -> BinScheme:
    """Quantile-cut the observed week offsets into equal-count bins.

    Boundary k sits at the offset of rank ceil(k*n/bin_count), nudged to
    the midpoint toward the next distinct value so no observation lands
    exactly on a cut. With distinct offsets the resulting occupancy
    imbalance is at most one; heavy ties can force larger imbalance
    because tied sends cannot be split across a boundary.
    """
    send_times = np.asarray(send_times)
    if send_times.size == 0:
        raise BinningError("no send times to fit on")
    if bin_count < 2:
        raise BinningError("bin_count must be at least 2")
    offsets = np.sort(week_offset(send_times).astype(np.float64))
    n = offsets.size
    if np.unique(offsets).size < bin_count:
        raise BinningError("insufficient distinct send offsets")

    boundaries = np.empty(bin_count + 1)
    boundaries[0] = 0.0
    boundaries[-1] = float(WEEK_SECONDS)
    for k in range(1, bin_count):
        rank = int(np.ceil(k * n / bin_count))  # 1-based
        left = offsets[rank - 1]
        rest = offsets[rank:]
        above = rest[rest > left]
        boundaries[k] = 0.5 * (left + above[0]) if above.size else left
    if np.any(np.diff(boundaries) <= 0):
        raise BinningError("insufficient distinct send offsets")
    return BinScheme(boundaries=boundaries)


def bin_of(ts, scheme: BinScheme):
    """Left-closed bin index of a timestamp's week offset; total on all ts."""
    off = week_offset(ts)
    idx = np.searchsorted(scheme.boundaries, off, side="right") - 1
    idx = np.clip(idx, 0, scheme.bin_count - 1)
    return idx if np.ndim(ts) else int(idx)


def one_hot(bin_index: int, bin_count: int) -> np.ndarray:
    if not 0 <= bin_index < bin_count:
        raise BinningError(f"bin {bin_index} out of range [0, {bin_count})")
    vec = np.zeros(bin_count)
    vec[bin_index] = 1.0
    return vec


def occupancy(send_times, scheme: BinScheme) -> np.ndarray:
    """Sends per bin; fit populations should be balanced within one."""
    bins = bin_of(np.asarray(send_times), scheme)
    return np.bincount(bins, minlength=scheme.bin_count)
