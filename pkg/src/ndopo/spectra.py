"""Output noise spectra of the below-threshold two-mode OPO.

Two independent routes to the same quantities are provided and are held to
agree to ~1e-9 in the test suite:

* closed forms (:func:`single_beam_spectrum`, :func:`combo_spectrum`,
  :func:`symmetric_spectrum`, :func:`degenerate_squeezing`), and
* the frequency-domain transfer-matrix route
  (:func:`transfer_matrices` / :func:`spectrum_via_matrices`), which solves
  the intracavity dynamics algebraically and applies the coupler boundary
  condition.

Conventions:

* All spectra are returned as ratios to the vacuum (standard quantum limit)
  level of the measured combination.  Whether that reference is the
  single-beam SQL (mixing angle ``psi = 0``) or the two-detector SQL
  (``psi != 0``) is carried as a tag in :class:`NoiseSpectrum`, never
  multiplied into the values.
* The detected pair of quadratures is mixed by the orthogonal rotation
  ``U(psi) = [[cos psi, sin psi], [-sin psi, cos psi]]``; ``psi = pi/4``
  measures the balanced sum/difference combinations.
* Efficiencies multiply only the correction to the vacuum floor.  Feeding
  :class:`~ndopo.params.DerivedParams` built from overall (detection-chain)
  efficiencies instead of bare escape efficiencies accounts for propagation
  and detector losses.

The closed forms are algebraically rearranged so that deep-squeezing values
near threshold do not suffer catastrophic cancellation; the quiet channel of
the symmetric lossless case satisfies ``v_plus * v_minus == 1`` to about
1e-12 over the whole validity range.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .csvio import format_value, read_table, render_table, write_table
from .params import (
    REFERENCE_SINGLE,
    REFERENCE_TWO,
    DerivedParams,
    OpoParams,
    ParameterError,
    denormalize_frequency,
    derive_params,
    effective_params,
)

__all__ = [
    "EPSILON_LIMIT",
    "DIVERGENCE_LIMIT",
    "DivergenceError",
    "canonical_psi",
    "PhaseConfig",
    "TransferMatrices",
    "transfer_matrices",
    "spectrum_via_matrices",
    "single_beam_spectrum",
    "combo_spectrum",
    "symmetric_spectrum",
    "degenerate_squeezing",
    "optimal_psi",
    "NoiseSpectrum",
    "sweep",
    "sweep_derived",
    "make_grid",
]

# The linearized model degrades as the pump approaches threshold; refuse the
# last permille outright and flag any variance beyond DIVERGENCE_LIMIT.
EPSILON_LIMIT = 0.999
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """A spectrum value exceeded the divergence guard."""

    def __init__(self, message, v_plus=None, v_minus=None):
        super().__init__(message)
        self.v_plus = v_plus
        self.v_minus = v_minus


def canonical_psi(psi: float) -> float:
    """Wrap a mixing angle into (-pi/2, pi/2]; spectra are pi-periodic in psi."""
    wrapped = math.remainder(psi, math.pi)
    if wrapped <= -math.pi / 2:
        wrapped += math.pi
    return wrapped


@dataclass(frozen=True)
class PhaseConfig:
    """Interacting quadrature phases for a pump phase ``chi`` and offset ``theta``.

    Only the quadrature pair at ``phi_plus = chi/2 + theta`` and
    ``phi_minus = chi/2 - theta`` couples through the parametric interaction;
    their sum equals ``chi`` for every ``theta``.
    """

    theta: float
    phi_plus: float
    phi_minus: float

    @classmethod
    def from_pump(cls, chi: float, theta: float) -> "PhaseConfig":
        return cls(theta=theta, phi_plus=chi / 2.0 + theta, phi_minus=chi / 2.0 - theta)


def _check_epsilon(epsilon: float):
    if not 0.0 <= epsilon < EPSILON_LIMIT:
        raise ParameterError(
            f"epsilon={epsilon:g} outside [0, {EPSILON_LIMIT}): the linearized "
            "below-threshold model does not apply"
        )


def _check_divergence(v_plus, v_minus, delta):
    big = np.maximum(np.abs(v_plus), np.abs(v_minus))
    if np.any(big > DIVERGENCE_LIMIT):
        idx = int(np.argmax(big))
        d = float(np.asarray(delta).reshape(-1)[idx]) if np.ndim(delta) else float(delta)
        raise DivergenceError(
            f"variance exceeds {DIVERGENCE_LIMIT:g} at grid index {idx} (delta={d:g}); "
            "parameters are too close to threshold",
            v_plus=v_plus,
            v_minus=v_minus,
        )


def _denominator(d: DerivedParams, delta_sq):
    """[delta^2 + (E+Lambda)^2][delta^2 + (E-Lambda)^2], cancellation-free.

    Uses E - Lambda = (epsilon^2 - 1)/(E + Lambda), exact because
    E^2 - Lambda^2 = epsilon^2 - 1 by construction.
    """
    e_plus = d.E + d.Lambda
    e_minus = -((1.0 - d.epsilon) * (1.0 + d.epsilon)) / e_plus
    return (delta_sq + e_plus**2) * (delta_sq + e_minus**2)


def _as_pair(v_plus, v_minus, scalar):
    if scalar:
        return float(v_plus), float(v_minus)
    return v_plus, v_minus


def combo_spectrum(d: DerivedParams, psi: float, delta):
    """SQL-normalized variances of the rotated output pair ``(Q_plus, Q_minus)``.

    Accepts a scalar or array ``delta``.  At ``psi = 0`` this reduces to the
    individual beam spectra, at ``psi = pi/4`` to the balanced sum/difference
    combinations.  The numerator is evaluated through

        core = -delta^2 - (1-eps)^2 + eps (sigma-1)^2 / sigma

    plus non-negative remainders, which keeps the quiet channel accurate in
    the deep-squeezing limit.
    """
    _check_epsilon(d.epsilon)
    arr = np.asarray(delta, dtype=float)
    scalar = arr.ndim == 0
    d2 = arr * arr
    eps = d.epsilon
    n = d2 + 1.0 + eps * eps
    sigma = d.sigma
    g = (sigma - 1.0) * (sigma + 1.0) / (2.0 * sigma)
    cos2 = math.cos(2.0 * psi)
    up = 2.0 * math.cos(math.pi / 4.0 - psi) ** 2  # 1 + sin(2 psi)
    um = 2.0 * math.sin(math.pi / 4.0 - psi) ** 2  # 1 - sin(2 psi)
    core = -d2 - (1.0 - eps) ** 2 + eps * (sigma - 1.0) ** 2 / sigma
    pref = 4.0 * eps * d.eta / _denominator(d, d2)
    v_plus = 1.0 + pref * (core + n * up + 2.0 * eps * g * cos2)
    v_minus = 1.0 + pref * (core + n * um - 2.0 * eps * g * cos2)
    _check_divergence(v_plus, v_minus, arr)
    return _as_pair(v_plus, v_minus, scalar)


def single_beam_spectrum(d: DerivedParams, delta):
    """Phase-insensitive excess noise of the individual signal/idler beams.

    ``v = 1 + eta_pm * 8 eps^2 / ([d^2+(E+L)^2][d^2+(E-L)^2])``, always >= 1.
    Normalized to the single-beam SQL.
    """
    _check_epsilon(d.epsilon)
    arr = np.asarray(delta, dtype=float)
    scalar = arr.ndim == 0
    excess = 8.0 * d.epsilon**2 / _denominator(d, arr * arr)
    v_plus = 1.0 + d.eta_plus * excess
    v_minus = 1.0 + d.eta_minus * excess
    _check_divergence(v_plus, v_minus, arr)
    return _as_pair(v_plus, v_minus, scalar)


def symmetric_spectrum(eta: float, epsilon: float, delta):
    """Sum/difference spectra for symmetric losses; independent oracle form.

    ``v_pm = 1 +- eta * 4 eps / (delta^2 + (eps -+ 1)^2)``.  For ``eta = 1``
    the product ``v_plus * v_minus`` is exactly 1 (minimum-uncertainty pair).
    """
    _check_epsilon(epsilon)
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta={eta:g} not in [0, 1]")
    arr = np.asarray(delta, dtype=float)
    scalar = arr.ndim == 0
    d2 = arr * arr
    v_plus = 1.0 + eta * 4.0 * epsilon / (d2 + (1.0 - epsilon) ** 2)
    v_minus = 1.0 - eta * 4.0 * epsilon / (d2 + (1.0 + epsilon) ** 2)
    _check_divergence(v_plus, v_minus, arr)
    return _as_pair(v_plus, v_minus, scalar)


def degenerate_squeezing(xi: float, epsilon: float, delta):
    """Squeezed and anti-squeezed variances of the degenerate output mode.

    ``v_sq = 1 - xi * 4 eps / (delta^2 + (1+eps)^2)`` with the anti-squeezed
    partner carrying the ``(1-eps)^2`` denominator; both relative to the
    single-beam SQL.  Coincides with the symmetric two-mode case, which the
    tests exploit as a cross-check against the matrix route.
    """
    if not 0.0 <= xi <= 1.0:
        raise ParameterError(f"xi={xi:g} not in [0, 1]")
    v_plus, v_minus = symmetric_spectrum(xi, epsilon, delta)
    if np.ndim(delta) == 0:
        return v_minus, v_plus
    return v_minus, v_plus


def optimal_psi(delta0: float, epsilon: float, sigma: float) -> float:
    """Mixing angle that maximizes the inter-beam correlations at ``delta0``.

    Solves ``tan(2 psi0) = (delta0^2 + 1 + eps^2) / ((sigma - 1/sigma) eps)``.
    The tangent fixes ``psi0`` only up to a quarter turn; both candidates
    nearest +-pi/4 are evaluated directly and the one whose quiet channel is
    (weakly) lower is returned, preferring the principal half-angle on the
    exact tie.  For ``sigma < 1`` that is the angle just above ``-pi/4``
    where ``Q_plus`` is the quiet combination; the two branches describe the
    same physics with the output labels exchanged.

    ``sigma = 1`` or ``epsilon = 0`` returns ``pi/4`` exactly.
    """
    _check_epsilon(epsilon)
    if delta0 < 0:
        raise ParameterError(f"delta0={delta0:g} must be >= 0")
    if sigma <= 0:
        raise ParameterError(f"sigma={sigma:g} must be > 0")
    if sigma == 1.0 or epsilon == 0.0:
        return math.pi / 4.0
    ratio = (delta0**2 + 1.0 + epsilon**2) / ((sigma - 1.0 / sigma) * epsilon)
    principal = 0.5 * math.atan(ratio)
    other = principal + math.pi / 2.0 if principal < 0 else principal - math.pi / 2.0
    scale = 1.0 / max(1.0, sigma * sigma)
    probe = effective_params(epsilon, sigma * sigma * scale, scale)
    quiet = [min(combo_spectrum(probe, cand, delta0)) for cand in (principal, other)]
    if quiet[1] < quiet[0] - 1e-12 * (1.0 + abs(quiet[0])):
        return other
    return principal


@dataclass(frozen=True)
class TransferMatrices:
    """Frequency-domain response from the two input ports to the output.

    ``t_in`` maps the coupler-port vacuum to the output (including the direct
    reflection), ``t_loss`` maps the residual-loss port.  At ``epsilon = 0``
    the pair is passive: ``t_in t_in^+ + t_loss t_loss^+ = 1``.
    """

    t_in: np.ndarray
    t_loss: np.ndarray
    omega: float


def transfer_matrices(p: OpoParams, omega: float) -> TransferMatrices:
    """Solve the intracavity response and apply the coupler boundary condition.

    The drift matrix is inverted in closed 2x2 form for determinism:
    ``D = [[gamma_p - i w, -c], [-c, gamma_m - i w]]`` with
    ``c = eps sqrt(gamma_p gamma_m)``; then ``t_in = A D^-1 A - 1`` and
    ``t_loss = A D^-1 B`` with the diagonal port couplings
    ``A = diag(sqrt(2 kappa))`` and ``B = diag(sqrt(2 (gamma - kappa)))``.
    """
    _check_epsilon(p.epsilon)
    c = p.epsilon * math.sqrt(p.gamma_plus * p.gamma_minus)
    dpp = p.gamma_plus - 1j * omega
    dmm = p.gamma_minus - 1j * omega
    det = dpp * dmm - c * c
    if det == 0:
        raise ParameterError("drift matrix is singular (threshold reached on resonance)")
    inv = np.array([[dmm, c], [c, dpp]], dtype=complex) / det
    a = np.array([math.sqrt(2.0 * p.kappa_plus), math.sqrt(2.0 * p.kappa_minus)])
    b = np.array(
        [
            math.sqrt(2.0 * (p.gamma_plus - p.kappa_plus)),
            math.sqrt(2.0 * (p.gamma_minus - p.kappa_minus)),
        ]
    )
    t_in = (a[:, None] * inv) * a[None, :] - np.eye(2)
    t_loss = (a[:, None] * inv) * b[None, :]
    return TransferMatrices(t_in=t_in, t_loss=t_loss, omega=omega)


def spectrum_via_matrices(p: OpoParams, psi: float, omega: float) -> np.ndarray:
    """Spectral matrix of the rotated output pair, SQL-normalized.

    ``S = M_in* M_in^T + M_loss* M_loss^T`` with ``M = U T U^T`` and unit
    (vacuum) input spectra.  Hermitian with a real diagonal; the diagonal
    reproduces :func:`combo_spectrum`.
    """
    t = transfer_matrices(p, omega)
    u = np.array(
        [[math.cos(psi), math.sin(psi)], [-math.sin(psi), math.cos(psi)]]
    )
    m_in = u @ t.t_in @ u.T
    m_loss = u @ t.t_loss @ u.T
    return m_in.conj() @ m_in.T + m_loss.conj() @ m_loss.T


def make_grid(delta_min: float, delta_max: float, n_points: int) -> np.ndarray:
    """Linear frequency grid in normalized units."""
    if n_points < 1:
        raise ParameterError(f"n_points={n_points} must be >= 1")
    if delta_max < delta_min or delta_min < 0:
        raise ParameterError(f"bad grid bounds [{delta_min:g}, {delta_max:g}]")
    if n_points == 1:
        return np.array([delta_min], dtype=float)
    return np.linspace(delta_min, delta_max, n_points)


@dataclass
class NoiseSpectrum:
    """A sampled spectrum of the rotated pair plus its labeling metadata.

    ``reference`` records which vacuum level the values are ratios to
    (``single_SQL`` for psi = 0, ``two_SQL`` otherwise); it is a tag, never a
    factor applied to the data.
    """

    delta: np.ndarray
    f_hz: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    v_plus_db: np.ndarray
    v_minus_db: np.ndarray
    reference: str
    psi: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.delta)

    def to_csv(self, path: str | None = None) -> str:
        meta = dict(self.meta)
        meta.setdefault("psi", self.psi)
        meta.setdefault("reference", self.reference)
        columns = {
            "delta": self.delta,
            "f_hz": self.f_hz,
            "v_plus": self.v_plus,
            "v_minus": self.v_minus,
            "v_plus_db": self.v_plus_db,
            "v_minus_db": self.v_minus_db,
            "reference": [self.reference] * len(self.delta),
        }
        if path is not None:
            write_table(path, meta, columns)
        return render_table(meta, columns)

    @classmethod
    def from_csv(cls, path_or_text: str, *, is_text: bool = False) -> "NoiseSpectrum":
        meta, columns = read_table(path_or_text, is_text=is_text)
        required = ("delta", "f_hz", "v_plus", "v_minus", "v_plus_db", "v_minus_db", "reference")
        missing = [name for name in required if name not in columns]
        if missing:
            raise ValueError(f"missing columns: {missing}")
        refs = set(columns["reference"])
        if len(refs) > 1:
            raise ValueError(f"inconsistent reference column: {sorted(refs)}")
        reference = refs.pop() if refs else meta.get("reference", REFERENCE_TWO)
        return cls(
            delta=np.array([float(x) for x in columns["delta"]]),
            f_hz=np.array([float(x) for x in columns["f_hz"]]),
            v_plus=np.array([float(x) for x in columns["v_plus"]]),
            v_minus=np.array([float(x) for x in columns["v_minus"]]),
            v_plus_db=np.array([float(x) for x in columns["v_plus_db"]]),
            v_minus_db=np.array([float(x) for x in columns["v_minus_db"]]),
            reference=reference,
            psi=float(meta.get("psi", "nan")),
            meta=meta,
        )


def _build_spectrum(d: DerivedParams, psi, deltas, f_hz, meta) -> NoiseSpectrum:
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size == 0:
        raise ParameterError("empty frequency grid")
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise ParameterError("frequency grid must be strictly increasing")
    psi = canonical_psi(psi)
    v_plus, v_minus = combo_spectrum(d, psi, deltas)
    reference = REFERENCE_SINGLE if psi == 0.0 else REFERENCE_TWO
    return NoiseSpectrum(
        delta=deltas,
        f_hz=np.asarray(f_hz, dtype=float),
        v_plus=v_plus,
        v_minus=v_minus,
        v_plus_db=10.0 * np.log10(v_plus),
        v_minus_db=10.0 * np.log10(v_minus),
        reference=reference,
        psi=psi,
        meta=meta,
    )


def sweep(p: OpoParams, psi: float, deltas) -> NoiseSpectrum:
    """Evaluate :func:`combo_spectrum` over a grid, with parameter echo.

    Deterministic pointwise evaluation; a divergence anywhere on the grid
    raises :class:`DivergenceError` carrying the grid index.
    """
    d = derive_params(p)
    f_hz = denormalize_frequency(np.asarray(deltas, dtype=float), p.gamma_plus, p.gamma_minus)
    meta = {
        "gamma_plus": format_value(p.gamma_plus),
        "gamma_minus": format_value(p.gamma_minus),
        "kappa_plus": format_value(p.kappa_plus),
        "kappa_minus": format_value(p.kappa_minus),
        "epsilon": format_value(p.epsilon),
        "chi": format_value(p.chi),
        "eta_plus": format_value(d.eta_plus),
        "eta_minus": format_value(d.eta_minus),
        "sigma": format_value(d.sigma),
        "rho": format_value(d.rho),
    }
    return _build_spectrum(d, psi, deltas, f_hz, meta)


def sweep_derived(d: DerivedParams, psi: float, deltas, rate_scale: float | None = None) -> NoiseSpectrum:
    """Grid sweep from dimensionless parameters (e.g. overall efficiencies).

    ``rate_scale`` is ``sqrt(gamma_plus * gamma_minus)`` in rad/s and only
    sets the ``f_hz`` column; omit it to leave frequencies in normalized
    units (``f_hz = delta / 2 pi``).
    """
    scale = 1.0 if rate_scale is None else rate_scale
    if scale <= 0:
        raise ParameterError(f"rate_scale={scale:g} must be > 0")
    deltas = np.asarray(deltas, dtype=float)
    f_hz = deltas * scale / (2.0 * math.pi)
    meta = {
        "eta_plus": format_value(d.eta_plus),
        "eta_minus": format_value(d.eta_minus),
        "eta": format_value(d.eta),
        "sigma": format_value(d.sigma),
        "rho": format_value(d.rho),
        "epsilon": format_value(d.epsilon),
        "rate_scale": format_value(scale),
    }
    return _build_spectrum(d, psi, deltas, f_hz, meta)
