"""Dynamic configuration selection under a latency bound.

``opt_par`` walks the profile rows in quality order (best NDS first) and
returns the first configuration whose estimated cycle latency fits the bound.
Because the walk is quality-ordered, the first fitting row is also the best
fitting row, so it can stop early.  When nothing fits it falls back to the
lowest-latency configuration so the vehicle degrades gracefully instead of
stalling.  ``oracle_select`` computes the same answer by exhaustive evaluation
and exists to cross-check the scan.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

from .latency import DownlinkPolicy, LatencyBreakdown, PROFILED_C2V, estimate_latency, within_bound
from .profiles import ConfigProfile, ProfileTable, SplitConfig, nds_rank_key

__all__ = ["Selection", "opt_par", "oracle_select"]


@dataclass(frozen=True)
class Selection:
    """Outcome of one selection round.

    ``feasible`` records whether the chosen configuration actually meets the
    bound; a ``False`` value means every configuration missed it and the
    fastest one was returned instead.  ``evaluations`` counts how many rows
    were priced before the decision, which is what makes the early exit
    observable.
    """

    config: SplitConfig
    breakdown: LatencyBreakdown
    feasible: bool
    row: ConfigProfile
    evaluations: int


def opt_par(
    sorted_rows: Sequence[ConfigProfile],
    bw_upl_mbps: float,
    dwn: DownlinkPolicy = PROFILED_C2V,
    lat_max_ms: float = 100.0,
) -> Selection:
    """Pick the best-quality configuration meeting ``lat_max_ms``.

    ``sorted_rows`` must already be in descending-NDS order (see
    :func:`splitperc.profiles.sorted_by_nds`); the early exit is only correct
    in that order.  When no row fits, returns the row with the strictly
    smallest estimated total (first such row in scan order) with
    ``feasible=False``.
    """
    if not sorted_rows:
        raise ValueError("sorted_rows must not be empty")
    lat_min = math.inf
    best_idx = 0
    best_breakdown = None
    for idx, row in enumerate(sorted_rows):
        breakdown = estimate_latency(row, bw_upl_mbps, dwn)
        if within_bound(breakdown, lat_max_ms):
            return Selection(
                config=row.config,
                breakdown=breakdown,
                feasible=True,
                row=row,
                evaluations=idx + 1,
            )
        if breakdown.total_ms < lat_min:
            lat_min = breakdown.total_ms
            best_idx = idx
            best_breakdown = breakdown
    fallback = sorted_rows[best_idx]
    return Selection(
        config=fallback.config,
        breakdown=best_breakdown,
        feasible=False,
        row=fallback,
        evaluations=len(sorted_rows),
    )


def oracle_select(
    table: ProfileTable,
    bw_upl_mbps: float,
    dwn: DownlinkPolicy = PROFILED_C2V,
    lat_max_ms: float = 100.0,
) -> Selection:
    """Exhaustive reference selector, used to validate :func:`opt_par`.

    Prices every row, then picks the best-ranked feasible row, or — when the
    feasible set is empty — the row with the smallest total (ties broken by
    the same ranking).  No early exit, no reliance on input order.
    """
    if not math.isfinite(lat_max_ms) or lat_max_ms <= 0:
        raise ValueError(f"lat_max_ms must be finite and > 0, got {lat_max_ms!r}")
    priced: List[tuple] = [
        (row, estimate_latency(row, bw_upl_mbps, dwn)) for row in table.rows
    ]
    feasible = [(row, bd) for row, bd in priced if bd.total_ms <= lat_max_ms]
    if feasible:
        row, breakdown = min(feasible, key=lambda pair: nds_rank_key(pair[0]))
        return Selection(row.config, breakdown, True, row, len(priced))
    row, breakdown = min(
        priced, key=lambda pair: (pair[1].total_ms, nds_rank_key(pair[0]))
    )
    return Selection(row.config, breakdown, False, row, len(priced))
