"""Physical parameters, unit conventions and derived dimensionless quantities.

Rate conventions used throughout the package:

* ``gamma_plus``/``gamma_minus`` are amplitude decay rates of the two cavity
  modes (rad/s, or dimensionless after normalization), ``kappa`` the part of
  each rate due to the output coupler, so the escape efficiency is
  ``eta = kappa / gamma``.
* A cavity with round-trip power loss ``l`` and free spectral range ``fsr``
  has a power linewidth ``FWHM = l * fsr / (2 pi)`` and amplitude decay rate
  ``gamma = pi * FWHM``.
* Analysis frequencies are expressed as ``delta = Omega / sqrt(gamma_plus *
  gamma_minus)`` with ``Omega = 2 pi f``.
* The pump drive is parameterized by ``epsilon``, the pump amplitude as a
  fraction of its oscillation-threshold value; everything here is restricted
  to below threshold, ``epsilon < 1``.

Noise levels are tagged with the reference they are normalized to:
``single_SQL`` (vacuum variance of one beam) or ``two_SQL`` (vacuum variance
of the summed photocurrents of two independent detectors, twice as large).
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

__all__ = [
    "ParameterError",
    "ZeroLossError",
    "REFERENCE_SINGLE",
    "REFERENCE_TWO",
    "OpoParams",
    "DerivedParams",
    "CavityGeometry",
    "CavityRates",
    "DetectionChain",
    "PumpModel",
    "derive_params",
    "effective_params",
    "overall_efficiency",
    "cavity_rates",
    "normalize_frequency",
    "denormalize_frequency",
    "db",
    "from_db",
]

REFERENCE_SINGLE = "single_SQL"
REFERENCE_TWO = "two_SQL"


class ParameterError(ValueError):
    """A physical parameter is outside its valid domain."""


class ZeroLossError(ParameterError):
    """Round-trip loss is zero: the finesse (and decay rates) would be infinite."""


@dataclass(frozen=True)
class OpoParams:
    """Cavity decay rates, coupler rates and pump drive of the two-mode OPO.

    ``kappa`` may not exceed ``gamma`` (escape efficiency is a probability)
    and ``epsilon`` must be below 1 (below threshold).
    """

    gamma_plus: float
    gamma_minus: float
    kappa_plus: float
    kappa_minus: float
    epsilon: float
    chi: float = 0.0

    def __post_init__(self):
        if not (self.gamma_plus > 0 and self.gamma_minus > 0):
            raise ParameterError("decay rates gamma_plus, gamma_minus must be > 0")
        for name, kappa, gamma in (
            ("kappa_plus", self.kappa_plus, self.gamma_plus),
            ("kappa_minus", self.kappa_minus, self.gamma_minus),
        ):
            if not 0.0 <= kappa <= gamma:
                raise ParameterError(
                    f"{name}={kappa:g} outside [0, gamma]={gamma:g}: escape efficiency "
                    "would fall outside [0, 1]"
                )
        if not 0.0 <= self.epsilon < 1.0:
            raise ParameterError(
                f"epsilon={self.epsilon:g} not in [0, 1): only the below-threshold "
                "regime is modeled"
            )

    def swapped(self) -> "OpoParams":
        """Exchange the + and - mode labels."""
        return OpoParams(
            gamma_plus=self.gamma_minus,
            gamma_minus=self.gamma_plus,
            kappa_plus=self.kappa_minus,
            kappa_minus=self.kappa_plus,
            epsilon=self.epsilon,
            chi=self.chi,
        )


@dataclass(frozen=True)
class DerivedParams:
    """Dimensionless quantities the spectra are expressed in.

    eta_plus, eta_minus
        escape (or, when constructed from a detection budget, overall)
        efficiencies of the two modes.
    eta, sigma
        their geometric mean and asymmetry, ``eta = sqrt(eta_plus*eta_minus)``
        and ``sigma = sqrt(eta_plus/eta_minus)``.
    rho, Lambda
        decay-rate asymmetry ``rho = sqrt(gamma_plus/gamma_minus)`` and the
        loss asymmetry function ``Lambda = (rho + 1/rho)/2 >= 1``.
    E
        effective pump parameter ``sqrt(epsilon**2 + Lambda**2 - 1)``; equals
        ``epsilon`` for symmetric decay (rho = 1).
    epsilon
        the pump parameter itself, carried along for convenience.
    """

    eta_plus: float
    eta_minus: float
    eta: float
    sigma: float
    rho: float
    Lambda: float
    E: float
    epsilon: float

    def swapped(self) -> "DerivedParams":
        return replace(
            self,
            eta_plus=self.eta_minus,
            eta_minus=self.eta_plus,
            sigma=1.0 / self.sigma,
            rho=1.0 / self.rho,
        )


def derive_params(p: OpoParams) -> DerivedParams:
    """Reduce cavity rates and pump to the dimensionless spectrum parameters.

    Pure function of its input; ``Lambda - 1`` and ``E`` are evaluated in
    cancellation-free form so that the symmetric case gives ``Lambda == 1``
    and ``E == epsilon`` exactly.
    """
    eta_plus = p.kappa_plus / p.gamma_plus
    eta_minus = p.kappa_minus / p.gamma_minus
    rho = math.sqrt(p.gamma_plus / p.gamma_minus)
    lam_minus_one = (rho - 1.0) ** 2 / (2.0 * rho)
    lam = 1.0 + lam_minus_one
    if rho == 1.0:
        effective = p.epsilon
    else:
        effective = math.sqrt(p.epsilon**2 + lam_minus_one * (lam + 1.0))
    return DerivedParams(
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        eta=math.sqrt(eta_plus * eta_minus),
        sigma=math.sqrt(eta_plus / eta_minus) if eta_minus > 0 else math.inf,
        rho=rho,
        Lambda=lam,
        E=effective,
        epsilon=p.epsilon,
    )


def effective_params(
    epsilon: float, eff_plus: float, eff_minus: float, rho: float = 1.0
) -> DerivedParams:
    """DerivedParams with the efficiencies replaced by an arbitrary pair.

    Used to fold a full detection budget into the spectra: propagation, mode
    overlap and detector losses degrade the correlations exactly like a lower
    escape efficiency, so the overall efficiencies ``xi`` simply take the
    place of ``eta`` in the formulas.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ParameterError(f"epsilon={epsilon:g} not in [0, 1)")
    for name, value in (("eff_plus", eff_plus), ("eff_minus", eff_minus)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name}={value:g} not in [0, 1]")
    if rho <= 0:
        raise ParameterError(f"rho={rho:g} must be > 0")
    lam_minus_one = (rho - 1.0) ** 2 / (2.0 * rho)
    lam = 1.0 + lam_minus_one
    effective = epsilon if rho == 1.0 else math.sqrt(epsilon**2 + lam_minus_one * (lam + 1.0))
    return DerivedParams(
        eta_plus=eff_plus,
        eta_minus=eff_minus,
        eta=math.sqrt(eff_plus * eff_minus),
        sigma=math.sqrt(eff_plus / eff_minus) if eff_minus > 0 else math.inf,
        rho=rho,
        Lambda=lam,
        E=effective,
        epsilon=epsilon,
    )


@dataclass(frozen=True)
class DetectionChain:
    """Multiplicative efficiency budget of one detection arm.

    ``lo_overlap`` is the local-oscillator overlap efficiency, i.e. the
    fringe visibility squared.
    """

    escape: float
    prop: float
    lo_overlap: float
    qe: float

    def __post_init__(self):
        for name in ("escape", "prop", "lo_overlap", "qe"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name}={value:g} not in [0, 1]")


def overall_efficiency(chain: DetectionChain) -> float:
    """Photon survival probability from creation to detection."""
    return chain.escape * chain.prop * chain.lo_overlap * chain.qe


@dataclass(frozen=True)
class CavityGeometry:
    """Round-trip losses and free spectral range of a cavity.

    ``e_nl_per_watt`` is the single-pass parametric nonlinearity; it only
    enters threshold-power arithmetic and may be left at 0 otherwise.
    """

    fsr_hz: float
    coupler_T: float
    residual_L: float
    pump_loss_Lp: float = 0.0
    e_nl_per_watt: float = 0.0

    def __post_init__(self):
        if self.fsr_hz <= 0:
            raise ParameterError(f"fsr_hz={self.fsr_hz:g} must be > 0")
        for name in ("coupler_T", "residual_L", "pump_loss_Lp"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ParameterError(f"{name}={value:g} not in [0, 1)")

    @property
    def total_loss(self) -> float:
        return self.coupler_T + self.residual_L + self.pump_loss_Lp


class CavityRates(NamedTuple):
    fwhm_hz: float
    gamma: float
    kappa: float


def cavity_rates(geom: CavityGeometry) -> CavityRates:
    """Linewidth and decay rates from round-trip loss and FSR.

    ``fwhm_hz = total_loss * fsr / (2 pi)`` (power linewidth), amplitude
    decay ``gamma = pi * fwhm_hz``, of which the coupler contributes in
    proportion to its share of the total loss.
    """
    total = geom.total_loss
    if total == 0.0:
        raise ZeroLossError("total round-trip loss is zero (infinite finesse)")
    fwhm_hz = total * geom.fsr_hz / (2.0 * math.pi)
    gamma = math.pi * fwhm_hz
    kappa = gamma * geom.coupler_T / total
    return CavityRates(fwhm_hz=fwhm_hz, gamma=gamma, kappa=kappa)


def normalize_frequency(f_hz, gamma_plus: float, gamma_minus: float):
    """Analysis frequency in units of the geometric-mean decay rate."""
    if gamma_plus <= 0 or gamma_minus <= 0:
        raise ParameterError("decay rates must be > 0")
    return 2.0 * math.pi * f_hz / math.sqrt(gamma_plus * gamma_minus)


def denormalize_frequency(delta, gamma_plus: float, gamma_minus: float):
    """Inverse of :func:`normalize_frequency`."""
    if gamma_plus <= 0 or gamma_minus <= 0:
        raise ParameterError("decay rates must be > 0")
    return delta * math.sqrt(gamma_plus * gamma_minus) / (2.0 * math.pi)


def db(ratio: float) -> float:
    """Power ratio to decibels."""
    if ratio <= 0:
        raise ParameterError(f"ratio={ratio:g} must be > 0 for a dB value")
    return 10.0 * math.log10(ratio)


def from_db(level_db: float) -> float:
    """Decibels back to a power ratio."""
    return 10.0 ** (level_db / 10.0)


@dataclass(frozen=True)
class PumpModel:
    """Pump bookkeeping: threshold amplitude and drive in power units.

    ``alpha_th = sqrt(gamma_plus*gamma_minus) / g`` ties the threshold
    amplitude to the mode coupling; ``epsilon`` follows the amplitude
    convention ``sqrt(pump_power / threshold_power)``.
    """

    coupling_g: float
    alpha_th: float
    pump_power_w: float
    threshold_power_w: float

    def __post_init__(self):
        if self.coupling_g <= 0 or self.alpha_th <= 0:
            raise ParameterError("coupling_g and alpha_th must be > 0")
        if self.threshold_power_w <= 0:
            raise ParameterError("threshold_power_w must be > 0")
        if not 0.0 <= self.pump_power_w < self.threshold_power_w:
            raise ParameterError("pump_power_w must sit in [0, threshold_power_w)")

    @classmethod
    def from_rates(
        cls,
        coupling_g: float,
        gamma_plus: float,
        gamma_minus: float,
        pump_power_w: float,
        threshold_power_w: float,
    ) -> "PumpModel":
        if coupling_g <= 0:
            raise ParameterError("coupling_g must be > 0")
        alpha_th = math.sqrt(gamma_plus * gamma_minus) / coupling_g
        return cls(coupling_g, alpha_th, pump_power_w, threshold_power_w)

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.pump_power_w / self.threshold_power_w)
