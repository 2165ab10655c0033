"""Calibration arithmetic and classical-field phase bookkeeping.

Covers the bench-level numbers around the quantum model: oscillation
threshold power from round-trip losses and single-pass nonlinearity, pump
parameter from phase-sensitive gain or from power ratios, the entanglement
bandwidth of the quiet channel, and the difference-frequency fringe audit
that ties the local-oscillator phases to the pump phase.

The fringe audit synthesizes what the bench measures: a weak field injected
at the low mode with phase ``chi/2 - theta'`` generates the high mode at
``chi/2 + theta'`` (phase conservation), so as ``theta'`` is scanned the two
DC interference fringes run in opposite directions and the difference of
their fitted phases stays constant at ``chi - (theta_plus + theta_minus)``.
Switching the lock from the correlated to the anti-correlated combination
shifts the local-oscillator phase sum by pi, which the audit recovers
exactly on noiseless data and within fit error on noisy data.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .params import OpoParams, ParameterError, denormalize_frequency
from .spectra import combo_spectrum, derive_params

__all__ = [
    "FitError",
    "ThresholdModel",
    "InjectionModel",
    "FringeTrace",
    "FringeFit",
    "FringeAudit",
    "threshold_power",
    "e_nl_from_threshold",
    "pump_param_from_gain",
    "epsilon_from_powers",
    "dfg_fringes",
    "fit_fringe",
    "fringe_phase_audit",
    "entanglement_bandwidth",
    "wrap_phase",
]

LOCK_CORRELATIONS = "correlations"
LOCK_ANTICORRELATIONS = "anticorrelations"


class FitError(RuntimeError):
    """Fringe fitting failed (degenerate input or non-convergence)."""


def wrap_phase(phi: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(phi, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def threshold_power(
    coupler_T: float, residual_L: float, pump_loss_Lp: float, e_nl_per_watt: float
) -> float:
    """Pump power needed to reach oscillation: ``(T+L+Lp)^2 / (4 E_NL)``."""
    total = coupler_T + residual_L + pump_loss_Lp
    if total <= 0:
        raise ParameterError("total round-trip loss must be > 0")
    if e_nl_per_watt <= 0:
        raise ParameterError(f"e_nl_per_watt={e_nl_per_watt:g} must be > 0")
    return total**2 / (4.0 * e_nl_per_watt)


def e_nl_from_threshold(
    p_th_w: float, coupler_T: float, residual_L: float, pump_loss_Lp: float
) -> float:
    """Invert :func:`threshold_power` for the single-pass nonlinearity."""
    total = coupler_T + residual_L + pump_loss_Lp
    if total <= 0:
        raise ParameterError("total round-trip loss must be > 0")
    if p_th_w <= 0:
        raise ParameterError(f"p_th_w={p_th_w:g} must be > 0")
    return total**2 / (4.0 * p_th_w)


@dataclass(frozen=True)
class ThresholdModel:
    """Round-trip losses, nonlinearity and the threshold power they imply."""

    coupler_T: float
    residual_L: float
    pump_loss_Lp: float
    e_nl_per_watt: float

    @property
    def p_th_w(self) -> float:
        return threshold_power(
            self.coupler_T, self.residual_L, self.pump_loss_Lp, self.e_nl_per_watt
        )


def pump_param_from_gain(gain: float) -> float:
    """Pump parameter from the maximum phase-sensitive gain ``(1-eps)^-2``."""
    if gain < 1.0:
        raise ParameterError(f"gain={gain:g} must be >= 1")
    return 1.0 - 1.0 / math.sqrt(gain)


def epsilon_from_powers(pump_w: float, threshold_w: float) -> float:
    """Amplitude convention: ``eps = sqrt(P_pump / P_threshold)``."""
    if threshold_w <= 0:
        raise ParameterError("threshold power must be > 0")
    if not 0.0 <= pump_w < threshold_w:
        raise ParameterError(
            f"pump power {pump_w:g} W must sit below threshold {threshold_w:g} W"
        )
    return math.sqrt(pump_w / threshold_w)


@dataclass(frozen=True)
class InjectionModel:
    """Injected-field phase bookkeeping relative to half the pump phase."""

    chi: float
    theta_prime: float = 0.0
    lock_mode: str = LOCK_CORRELATIONS

    def __post_init__(self):
        if self.lock_mode not in (LOCK_CORRELATIONS, LOCK_ANTICORRELATIONS):
            raise ParameterError(f"unknown lock_mode {self.lock_mode!r}")


@dataclass
class FringeTrace:
    """DC interference samples versus the scanned injection phase."""

    x: np.ndarray
    y: np.ndarray
    noise_level: float = 0.0


@dataclass(frozen=True)
class FringeFit:
    amplitude: float
    phase: float
    offset: float
    frequency: float
    residual_rms: float


def dfg_fringes(
    model: InjectionModel,
    scan,
    lo_phases: tuple,
    noise_level: float = 0.0,
    seed: int = 0,
):
    """Synthesize the two DC fringes of the injected/generated field pair.

    ``scan`` holds the injected-field phase offsets theta' (radians,
    monotone).  The low-mode field carries ``chi/2 - theta'`` and the
    generated high-mode field ``chi/2 + theta'``; each arm beats against its
    local oscillator, giving ``cos(theta_LO - field phase)`` plus Gaussian
    noise.  In the anti-correlations lock the plus-arm LO is offset by pi,
    shifting the LO phase sum by pi relative to the correlations lock.
    """
    x = np.asarray(scan, dtype=float)
    if x.size == 0:
        raise ParameterError("empty scan")
    if x.size > 1 and not np.all(np.diff(x) > 0):
        raise ParameterError("scan must be strictly increasing")
    theta_plus, theta_minus = lo_phases
    if model.lock_mode == LOCK_ANTICORRELATIONS:
        theta_plus = theta_plus + math.pi
    offset = model.theta_prime
    phase_plus = model.chi / 2.0 + (x + offset)
    phase_minus = model.chi / 2.0 - (x + offset)
    y_plus = np.cos(theta_plus - phase_plus)
    y_minus = np.cos(theta_minus - phase_minus)
    if noise_level > 0:
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, 0], dtype=np.uint64))
        )
        y_plus = y_plus + noise_level * rng.standard_normal(x.size)
        y_minus = y_minus + noise_level * rng.standard_normal(x.size)
    return (
        FringeTrace(x=x, y=y_plus, noise_level=noise_level),
        FringeTrace(x=x, y=y_minus, noise_level=noise_level),
    )


def _sine_design(x: np.ndarray, y: np.ndarray, omega: float):
    """Linear least squares of a sin(w x), cos(w x), 1 at fixed frequency."""
    design = np.column_stack([np.sin(omega * x), np.cos(omega * x), np.ones_like(x)])
    coeff, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coeff
    return coeff, float(resid @ resid)


def fit_fringe(trace: FringeTrace, max_iter: int = 200) -> FringeFit:
    """Least-squares fit of ``A sin(w x + phase) + C`` with unknown frequency.

    The frequency starts from the dominant discrete-spectrum bin (the scan
    must be uniformly sampled) and is refined by a bounded 1-D search over
    the separable least-squares residual; the amplitude/phase/offset solve
    is linear at each frequency.  Requires at least three periods in the
    scan and a fringe that rises above the residual noise.
    """
    x = np.asarray(trace.x, dtype=float)
    y = np.asarray(trace.y, dtype=float)
    if x.size < 8:
        raise FitError(f"only {x.size} samples; too few to fit")
    dx = np.diff(x)
    if np.max(np.abs(dx - dx[0])) > 1e-9 * max(abs(dx[0]), 1e-300):
        raise FitError("scan must be uniformly sampled for the spectral frequency guess")
    span = x[-1] - x[0]
    demeaned = y - y.mean()
    power = np.abs(np.fft.rfft(demeaned)) ** 2
    if len(power) < 3 or not np.any(power[1:] > 0):
        raise FitError("no fringe: spectrum of the trace is empty")
    k = 1 + int(np.argmax(power[1:]))
    omega0 = 2.0 * math.pi * k / (x.size * dx[0])
    bin_width = 2.0 * math.pi / (x.size * dx[0])
    lo = max(omega0 - bin_width, 0.5 * bin_width)
    hi = omega0 + bin_width
    result = optimize.minimize_scalar(
        lambda w: _sine_design(x, y, w)[1],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12 * omega0, "maxiter": max_iter},
    )
    if not result.success:
        raise FitError(f"frequency refinement did not converge: {result.message}")
    omega = float(result.x)
    if span * omega < 3.0 * 2.0 * math.pi:
        raise FitError(
            f"scan covers {span * omega / (2 * math.pi):.2f} periods; need >= 3"
        )
    coeff, rss = _sine_design(x, y, omega)
    amplitude = math.hypot(coeff[0], coeff[1])
    residual_rms = math.sqrt(rss / x.size)
    if amplitude < max(4.0 * residual_rms / math.sqrt(x.size), 1e-12):
        raise FitError(
            f"no fringe: fitted amplitude {amplitude:.3g} is not significant "
            f"against residual rms {residual_rms:.3g}"
        )
    phase = wrap_phase(math.atan2(coeff[1], coeff[0]))
    return FringeFit(
        amplitude=amplitude,
        phase=phase,
        offset=float(coeff[2]),
        frequency=omega,
        residual_rms=residual_rms,
    )


@dataclass
class FringeAudit:
    """Windowed fringe fits for both locks and the recovered pi shift."""

    diffs_correlations: np.ndarray
    diffs_anticorrelations: np.ndarray
    diff_correlations: float
    diff_anticorrelations: float
    scan_spread: float
    lock_shift: float

    def lines(self) -> list:
        return [
            "fringe phase audit (radians, wrapped to (-pi, pi])",
            f"  fitted phase difference, correlations lock:      {self.diff_correlations:+.6f}",
            f"  fitted phase difference, anti-correlations lock: {self.diff_anticorrelations:+.6f}",
            f"  spread across scan windows:                      {self.scan_spread:.3g}",
            f"  lock-switch shift (ideal pi = {math.pi:.6f}):       {self.lock_shift:+.6f}",
        ]


def _windowed_diffs(trace_plus: FringeTrace, trace_minus: FringeTrace, n_windows: int):
    n = len(trace_plus.x)
    diffs = []
    for w in range(n_windows):
        sl = slice(w * n // n_windows, (w + 1) * n // n_windows)
        fit_p = fit_fringe(FringeTrace(trace_plus.x[sl], trace_plus.y[sl]))
        fit_m = fit_fringe(FringeTrace(trace_minus.x[sl], trace_minus.y[sl]))
        diffs.append(wrap_phase(fit_p.phase - fit_m.phase))
    return np.array(diffs)


def fringe_phase_audit(
    chi: float,
    lo_phases: tuple,
    scan=None,
    noise_level: float = 0.0,
    seed: int = 0,
    n_windows: int = 3,
) -> FringeAudit:
    """Run both locks over the scan and recover the pi lock-switch shift.

    Each scan window (>= 3 periods) is fitted separately; the per-window
    fitted phase difference between the two arms is scan-invariant, and its
    change under the correlations -> anti-correlations switch is the
    lock shift, ideally pi exactly.
    """
    if scan is None:
        scan = np.linspace(0.0, n_windows * 3 * 2.0 * math.pi, n_windows * 600)
    traces = {}
    for mode in (LOCK_CORRELATIONS, LOCK_ANTICORRELATIONS):
        model = InjectionModel(chi=chi, lock_mode=mode)
        traces[mode] = dfg_fringes(model, scan, lo_phases, noise_level, seed)
    diffs_c = _windowed_diffs(*traces[LOCK_CORRELATIONS], n_windows)
    diffs_ac = _windowed_diffs(*traces[LOCK_ANTICORRELATIONS], n_windows)
    mean_c = _circular_mean(diffs_c)
    mean_ac = _circular_mean(diffs_ac)
    spread = max(_circular_spread(diffs_c), _circular_spread(diffs_ac))
    return FringeAudit(
        diffs_correlations=diffs_c,
        diffs_anticorrelations=diffs_ac,
        diff_correlations=mean_c,
        diff_anticorrelations=mean_ac,
        scan_spread=spread,
        lock_shift=wrap_phase(mean_c - mean_ac),
    )


def _circular_mean(angles: np.ndarray) -> float:
    return wrap_phase(math.atan2(np.sin(angles).mean(), np.cos(angles).mean()))


def _circular_spread(angles: np.ndarray) -> float:
    mean = _circular_mean(angles)
    return float(np.max(np.abs([wrap_phase(a - mean) for a in angles])))


def entanglement_bandwidth(p: OpoParams, psi: float) -> float:
    """Full width (Hz) over which the quiet-channel noise reduction persists.

    The reduction ``1 - v_minus(delta)`` must be positive on resonance; the
    returned width is twice the frequency where it has fallen to half its
    resonant value, located by bisection on the analytic spectrum.  In the
    symmetric case this equals ``(1 + eps)`` times the cavity linewidth.
    """
    d = derive_params(p)
    reduction0 = 1.0 - combo_spectrum(d, psi, 0.0)[1]
    if reduction0 <= 0:
        raise ParameterError(
            "no quiet-channel squeezing at delta = 0 for this mixing angle "
            "(the quiet combination may be the plus channel here)"
        )
    target = reduction0 / 2.0

    def excess(delta):
        return (1.0 - combo_spectrum(d, psi, delta)[1]) - target

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e9:
            raise ParameterError("noise reduction does not fall to half (no bandwidth)")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    delta_half = 0.5 * (lo + hi)
    return 2.0 * denormalize_frequency(delta_half, p.gamma_plus, p.gamma_minus)
