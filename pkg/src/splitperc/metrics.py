"""Detection-quality scoring.

The nuScenes detection score (NDS) folds mean average precision and five
true-positive error terms into one number in [0, 1]: each error contributes
through ``1 - min(1, err)`` so errors at or beyond 1.0 stop hurting, and mAP
carries half the weight.
"""

import math
from dataclasses import dataclass
from typing import Tuple

__all__ = ["DetectionScores", "nds", "accuracy_gain"]

_NUM_TP_ERRORS = 5


@dataclass(frozen=True)
class DetectionScores:
    """Mean AP plus the five true-positive error terms (ATE, ASE, AOE, AVE, AAE)."""

    mean_ap: float
    tp_errors: Tuple[float, float, float, float, float]

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean_ap) or not 0.0 <= self.mean_ap <= 1.0:
            raise ValueError(f"mean_ap must be in [0, 1], got {self.mean_ap!r}")
        object.__setattr__(self, "tp_errors", tuple(self.tp_errors))
        if len(self.tp_errors) != _NUM_TP_ERRORS:
            raise ValueError(
                f"expected {_NUM_TP_ERRORS} true-positive errors, got {len(self.tp_errors)}"
            )
        for err in self.tp_errors:
            if not math.isfinite(err) or err < 0.0:
                raise ValueError(f"tp errors must be finite and >= 0, got {err!r}")


def nds(scores: DetectionScores) -> float:
    """Composite detection score in [0, 1]."""
    terms = [5.0 * scores.mean_ap]
    terms.extend(1.0 - min(1.0, err) for err in scores.tp_errors)
    return math.fsum(terms) / 10.0


def accuracy_gain(nds_dynamic: float, nds_baseline: float) -> float:
    """Relative improvement of a dynamic policy over a baseline score."""
    if not math.isfinite(nds_dynamic) or nds_dynamic < 0.0:
        raise ValueError(f"nds_dynamic must be finite and >= 0, got {nds_dynamic!r}")
    if not math.isfinite(nds_baseline) or nds_baseline <= 0.0:
        raise ValueError(f"nds_baseline must be finite and > 0, got {nds_baseline!r}")
    return (nds_dynamic - nds_baseline) / nds_baseline
