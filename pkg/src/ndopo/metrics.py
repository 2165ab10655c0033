"""Entanglement and EPR figures of merit on SQL-normalized variances.

Measured noise levels come in two normalizations that differ by a factor of
two in the raw variance (one detector's vacuum level versus the summed level
of two independent detectors).  Every value here therefore carries an
explicit reference tag, conversions are explicit, and mixing references in a
binary operation is a hard error.
"""

import math
from dataclasses import dataclass, replace

from .params import REFERENCE_SINGLE, REFERENCE_TWO, ParameterError, db, from_db

__all__ = [
    "ReferenceMismatchError",
    "NoiseFigure",
    "SeparabilityResult",
    "EprResult",
    "correct_electronic",
    "separability",
    "epr_product",
    "reference_convert",
    "SEPARABILITY_BOUND",
]

SEPARABILITY_BOUND = 2.0
_REFERENCES = (REFERENCE_SINGLE, REFERENCE_TWO)


class ReferenceMismatchError(ValueError):
    """Operands are normalized to different SQL references."""


@dataclass(frozen=True)
class NoiseFigure:
    """A variance as a ratio to its stated SQL reference."""

    value: float
    reference: str
    corrected: bool = False

    def __post_init__(self):
        if self.value <= 0:
            raise ParameterError(f"noise figure must be > 0, got {self.value:g}")
        if self.reference not in _REFERENCES:
            raise ParameterError(f"unknown reference {self.reference!r}")

    @classmethod
    def from_db(cls, level_db: float, reference: str, corrected: bool = False) -> "NoiseFigure":
        return cls(value=from_db(level_db), reference=reference, corrected=corrected)

    @property
    def level_db(self) -> float:
        return db(self.value)


def _require_reference(fig: NoiseFigure, reference: str, what: str):
    if fig.reference != reference:
        raise ReferenceMismatchError(
            f"{what} must be {reference}-referenced, got {fig.reference}"
        )


def correct_electronic(measured: NoiseFigure, floor_db_below_sql: float) -> NoiseFigure:
    """Remove the additive electronic-noise floor from a measured level.

    The floor (given in dB below the SQL of the same measurement) sits under
    both the signal trace and the SQL trace, so with ``f`` the floor and
    ``m`` the measured level in linear units the corrected ratio is
    ``(m - f) / (1 - f)``.  Squeezing gets deeper, excess noise larger.
    """
    f = from_db(-floor_db_below_sql)
    if f >= 1.0:
        raise ParameterError(
            f"electronic floor at {floor_db_below_sql:g} dB is not below the SQL"
        )
    if measured.value <= f:
        raise ParameterError(
            f"measured level {measured.level_db:.2f} dB is at or below the electronic "
            f"floor ({-floor_db_below_sql:.2f} dB)"
        )
    corrected = (measured.value - f) / (1.0 - f)
    return replace(measured, value=corrected, corrected=True)


@dataclass(frozen=True)
class SeparabilityResult:
    """Two-variance separability check against the bound of 2."""

    sum: float
    bound: float
    entangled: bool
    margin_db: float


def separability(v_diff: NoiseFigure, v_sum_conj: NoiseFigure) -> SeparabilityResult:
    """Duan-Simon style inseparability sum of the two conjugate joint variances.

    Both inputs must be normalized so that two vacua contribute 1 each
    (two-detector SQL); any state with ``v_diff + v_sum_conj < 2`` is
    inseparable.  ``margin_db`` reports the sum relative to the bound.
    """
    _require_reference(v_diff, REFERENCE_TWO, "v_diff")
    _require_reference(v_sum_conj, REFERENCE_TWO, "v_sum_conj")
    total = v_diff.value + v_sum_conj.value
    return SeparabilityResult(
        sum=total,
        bound=SEPARABILITY_BOUND,
        entangled=total < SEPARABILITY_BOUND,
        margin_db=db(total / SEPARABILITY_BOUND),
    )


@dataclass(frozen=True)
class EprResult:
    """Product of inferred conjugate variances against the Heisenberg unit."""

    v_inf_1: float
    v_inf_2: float
    product: float
    paradox: bool


def epr_product(v1: NoiseFigure, v2: NoiseFigure) -> EprResult:
    """EPR criterion from the two inferred variances (single-beam SQL units).

    The inferred variance of each remote quadrature is taken equal to the
    measured conditional sum/difference variance (unit-gain inference, no
    optimized gain factor).  ``product < 1`` demonstrates the paradox.
    """
    _require_reference(v1, REFERENCE_SINGLE, "v1")
    _require_reference(v2, REFERENCE_SINGLE, "v2")
    product = v1.value * v2.value
    return EprResult(v_inf_1=v1.value, v_inf_2=v2.value, product=product, paradox=product < 1.0)


def reference_convert(fig: NoiseFigure, target_reference: str) -> NoiseFigure:
    """Re-express a noise figure against the other SQL reference.

    The same physical variance divided by a reference twice as large gives
    half the ratio: ``value_single = 2 * value_two``.
    """
    if target_reference not in _REFERENCES:
        raise ParameterError(f"unknown reference {target_reference!r}")
    if fig.reference == target_reference:
        return fig
    if fig.reference == REFERENCE_TWO:
        value = 2.0 * fig.value
    else:
        value = fig.value / 2.0
    return replace(fig, value=value, reference=target_reference)
