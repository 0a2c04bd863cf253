"""Closed-form forward-retrieval AFC efficiency and the depth inversion built on it."""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from functions.errors import DomainError, InconsistencyError

DEPHASING_EXPONENT = 7.0


@dataclass(frozen=True)
class TheoryInputs:
    """Comb tooth depth d, background depth d0, finesse F and spacing delta (Hz)."""
    d: float
    d0: float
    finesse: float
    delta: float = 100e6

    def __post_init__(self):
        if self.d < 0:
            raise DomainError(f"d must be non-negative, got {self.d}")
        if self.d0 < 0:
            raise DomainError(f"d0 must be non-negative, got {self.d0}")
        if self.finesse <= 0:
            raise DomainError(f"finesse must be positive, got {self.finesse}")
        if self.delta <= 0:
            raise DomainError(f"delta must be positive, got {self.delta}")


@dataclass(frozen=True)
class EfficiencyBreakdown:
    """eta = coupling * reabsorption * dephasing * background."""
    eta: float
    coupling: float
    reabsorption: float
    dephasing: float
    background: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "eta": self.eta,
            "coupling": self.coupling,
            "reabsorption": self.reabsorption,
            "dephasing": self.dephasing,
            "background": self.background,
        }


def analytic_efficiency(inputs: TheoryInputs) -> EfficiencyBreakdown:
    """(d/F)^2 exp(-d/F) exp(-7/F^2) exp(-d0)."""
    ratio = inputs.d / inputs.finesse
    coupling = ratio ** 2
    reabsorption = float(np.exp(-ratio))
    dephasing = float(np.exp(-DEPHASING_EXPONENT / inputs.finesse ** 2))
    background = float(np.exp(-inputs.d0))
    return EfficiencyBreakdown(
        eta=coupling * reabsorption * dephasing * background,
        coupling=coupling,
        reabsorption=reabsorption,
        dephasing=dephasing,
        background=background,
    )


def echo_time(delta: float) -> float:
    """Rephasing time 1/delta for a spacing in Hz."""
    if delta <= 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return 1.0 / delta


def echo_ratio_model(d: float, finesse: float) -> float:
    """Echo-to-transmitted ratio (d/F)^2 exp(-7/F^2); the common exp(-d/F - d0) divides out."""
    return (d / finesse) ** 2 * float(np.exp(-DEPHASING_EXPONENT / finesse ** 2))


def transmission_model(d: float, d0: float, finesse: float) -> float:
    """Transmission exp(-d/F - d0) of a pulse spanning many teeth."""
    return float(np.exp(-d / finesse - d0))


def infer_depths(echo_to_transmit_ratio: float, absolute_transmission: float, finesse: float) -> Tuple[float, float]:
    """
    Recover (d, d0) from a measured echo/transmission ratio and the absolute transmission.

    Args:
        echo_to_transmit_ratio: Echo energy over transmitted energy (>= 0)
        absolute_transmission: Transmitted fraction of the input, in (0, 1]
        finesse: Comb finesse

    Returns:
        (d, d0)

    Raises:
        InconsistencyError: the inputs imply d0 < 0; ``raw`` holds the unclipped pair
    """
    if echo_to_transmit_ratio < 0:
        raise DomainError(f"echo/transmission ratio must be non-negative, got {echo_to_transmit_ratio}")
    if not 0.0 < absolute_transmission <= 1.0:
        raise DomainError(f"transmission must lie in (0, 1], got {absolute_transmission}")
    if finesse <= 0:
        raise DomainError(f"finesse must be positive, got {finesse}")

    d = finesse * float(np.sqrt(echo_to_transmit_ratio * np.exp(DEPHASING_EXPONENT / finesse ** 2)))
    d0 = -float(np.log(absolute_transmission)) - d / finesse
    if d0 < 0:
        raise InconsistencyError(
            f"inputs imply a negative background depth (d={d:.4f}, d0={d0:.4f})", raw=(d, d0)
        )
    return d, d0


def optimal_depth(finesse: float) -> float:
    """Depth 2F maximizing (d/F)^2 exp(-d/F)."""
    if finesse <= 0:
        raise DomainError(f"finesse must be positive, got {finesse}")
    return 2.0 * finesse
