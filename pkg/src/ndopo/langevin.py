"""Stochastic time-domain oracle for the analytic spectra.

Integrates the coupled quadrature Langevin equations with an
Euler-Maruyama step,

    q[n+1] = q[n] + M q[n] dt + sqrt(2 kappa dt) w_a[n]
                              + sqrt(2 (gamma - kappa) dt) w_b[n],
    M = [[-gamma_plus, eps sqrt(gamma_plus gamma_minus)],
         [eps sqrt(gamma_plus gamma_minus), -gamma_minus]],

forms the output through the coupler boundary condition with the same-step
coupler increment,

    q_out[n] = sqrt(2 kappa) q[n] - w_a[n] / sqrt(dt),

and estimates power spectra by Welch averaging.  Reusing the very increment
that drove the step is what carries the input-output interference: without
it the vacuum (eps = 0) output would not be spectrally flat, which the test
suite checks as a negative control.

Vacuum inputs are white with unit two-sided spectral density, represented
discretely as ``w/sqrt(dt)``; the Welch estimator is normalized so such a
sequence reads 1 (the single-beam SQL), and that normalization is measured,
not assumed, by running synthetic white noise through the identical
estimator (:func:`white_calibration`).

Randomness comes from counter-based Philox streams keyed ``(seed,
realization)``, so ensembles are reproducible regardless of evaluation
order; identical seed, configuration and parameters give bit-identical
series.
"""

import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from ._kernels import integrate
from .csvio import format_value, render_table, write_table
from .params import OpoParams, ParameterError, normalize_frequency
from .spectra import NoiseSpectrum

__all__ = [
    "GridMismatchError",
    "SimConfig",
    "TimeSeriesBundle",
    "simulate",
    "rotate_outputs",
    "PsdEstimate",
    "estimate_psd",
    "white_calibration",
    "mc_output_spectrum",
    "ComparisonReport",
    "compare_to_analytic",
    "psd_pair_to_csv",
    "dump_timeseries",
    "load_timeseries",
]

# dt must resolve the fastest decay; burn-in must cover the slowest one.
DT_SAFETY = 0.01
BURN_IN_DECAY_TIMES = 10.0
MIN_SEGMENTS = 16
_CALIBRATION_STREAM = 2**63  # realization index reserved for calibration noise
_HEADER_SIZE = 128
_MAGIC = b"NDOPOTS1"


class GridMismatchError(ValueError):
    """Estimated and analytic spectra are not on the same frequency grid."""


@dataclass(frozen=True)
class SimConfig:
    """Integration and ensemble settings.

    ``n_steps`` is the total step count per realization including the
    ``burn_in`` steps that are discarded before any statistics.
    """

    dt: float
    n_steps: int
    burn_in: int
    seed: int
    n_realizations: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError(f"dt={self.dt:g} must be > 0")
        if self.burn_in < 0 or self.n_steps <= self.burn_in:
            raise ParameterError(
                f"need n_steps > burn_in >= 0, got n_steps={self.n_steps}, burn_in={self.burn_in}"
            )
        if self.seed < 0:
            raise ParameterError("seed must be a non-negative integer")
        if self.n_realizations < 1:
            raise ParameterError("n_realizations must be >= 1")


def _slowest_decay(p: OpoParams) -> float:
    half_sum = 0.5 * (p.gamma_plus + p.gamma_minus)
    split = math.sqrt(
        (0.5 * (p.gamma_plus - p.gamma_minus)) ** 2
        + (p.epsilon**2) * p.gamma_plus * p.gamma_minus
    )
    return half_sum - split


def _validate(p: OpoParams, cfg: SimConfig):
    gmax = max(p.gamma_plus, p.gamma_minus)
    if cfg.dt > DT_SAFETY / gmax:
        raise ParameterError(
            f"dt={cfg.dt:g} too coarse: need dt <= {DT_SAFETY / gmax:g} "
            f"(= {DT_SAFETY:g}/max gamma)"
        )
    slow = _slowest_decay(p)
    needed = BURN_IN_DECAY_TIMES / slow / cfg.dt
    if cfg.burn_in < needed:
        raise ParameterError(
            f"burn_in={cfg.burn_in} too short: need >= {math.ceil(needed)} steps "
            f"({BURN_IN_DECAY_TIMES:g} slowest decay times)"
        )


def _noise_stream(seed: int, realization: int) -> np.random.Generator:
    key = np.array([seed, realization], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class TimeSeriesBundle:
    """One realization: intracavity and output quadrature pairs.

    ``noise_in`` keeps the coupler-port increments so the feedthrough term
    can be reconstructed (or removed, for the negative control).
    """

    q_intra: np.ndarray
    q_out: np.ndarray
    noise_in: np.ndarray
    dt: float
    params: OpoParams
    seed: int
    realization: int = 0

    def __post_init__(self):
        n = len(self.q_intra)
        if len(self.q_out) != n or len(self.noise_in) != n:
            raise ParameterError("bundle arrays must have equal length")


def simulate(p: OpoParams, cfg: SimConfig, realization: int = 0) -> TimeSeriesBundle:
    """Integrate one realization and discard the burn-in."""
    _validate(p, cfg)
    rng = _noise_stream(cfg.seed, realization)
    n = cfg.n_steps
    w_couple = np.empty((n, 2))
    w_loss = np.empty((n, 2))
    rng.standard_normal(out=w_couple)
    rng.standard_normal(out=w_loss)
    q_intra = np.empty((n, 2))
    q_out = np.empty((n, 2))
    integrate(
        p.gamma_plus, p.gamma_minus, p.kappa_plus, p.kappa_minus, p.epsilon,
        cfg.dt, w_couple, w_loss, q_intra, q_out,
    )
    bundle = TimeSeriesBundle(
        q_intra=q_intra[cfg.burn_in :],
        q_out=q_out[cfg.burn_in :],
        noise_in=w_couple[cfg.burn_in :],
        dt=cfg.dt,
        params=p,
        seed=cfg.seed,
        realization=realization,
    )
    if not (np.isfinite(bundle.q_intra).all() and np.isfinite(bundle.q_out).all()):
        raise RuntimeError("integration produced non-finite values")
    return bundle


def _rotation(psi: float) -> np.ndarray:
    return np.array(
        [[math.cos(psi), math.sin(psi)], [-math.sin(psi), math.cos(psi)]]
    )


def rotate_outputs(bundle: TimeSeriesBundle, psi: float) -> np.ndarray:
    """Per-sample orthogonal mix of the output pair; energy preserving."""
    return bundle.q_out @ _rotation(psi).T


@dataclass
class PsdEstimate:
    """Welch estimate: grid, SQL ratios, and per-bin standard errors."""

    freqs: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    segments: int
    window: str
    calibration: float = 1.0
    delta: np.ndarray | None = None

    def with_delta(self, gamma_plus: float, gamma_minus: float) -> "PsdEstimate":
        return replace(self, delta=normalize_frequency(self.freqs, gamma_plus, gamma_minus))

    def band(self, delta_lo: float, delta_hi: float) -> "PsdEstimate":
        if self.delta is None:
            raise ParameterError("delta grid not set; call with_delta first")
        mask = (self.delta > delta_lo) & (self.delta <= delta_hi)
        return replace(
            self,
            freqs=self.freqs[mask],
            values=self.values[mask],
            stderr=self.stderr[mask],
            delta=self.delta[mask],
        )


def _segment_psds(x: np.ndarray, fs: float, window: str, nperseg: int, noverlap: int):
    """Per-segment two-sided spectral densities on the one-sided grid."""
    freqs, _, spec = signal.spectrogram(
        x,
        fs=fs,
        window=window,
        nperseg=nperseg,
        noverlap=noverlap,
        detrend=False,
        scaling="density",
        mode="psd",
    )
    # undo the one-sided doubling so white w/sqrt(dt) reads exactly 1
    if nperseg % 2 == 0:
        spec[1:-1] /= 2.0
    else:
        spec[1:] /= 2.0
    return freqs, spec


def estimate_psd(
    series,
    dt: float,
    segment_len: int,
    overlap: float = 0.5,
    window: str = "hann",
    calibration: float = 1.0,
) -> PsdEstimate:
    """Welch average over one or more series, pooled segment-wise.

    Values are two-sided spectral densities divided by ``calibration``;
    ``stderr`` is the sample standard deviation of the per-segment values
    over ``sqrt(segments)``.
    """
    if isinstance(series, np.ndarray) and series.ndim == 1:
        series = [series]
    if not 0.0 <= overlap <= 0.9:
        raise ParameterError(f"overlap={overlap:g} not in [0, 0.9]")
    if segment_len < 2:
        raise ParameterError("segment_len must be >= 2")
    noverlap = int(round(segment_len * overlap))
    fs = 1.0 / dt
    freqs = None
    total = total_sq = None
    count = 0
    for x in series:
        x = np.asarray(x)
        if len(x) < segment_len:
            raise ParameterError(
                f"series of length {len(x)} shorter than segment_len={segment_len}"
            )
        f, spec = _segment_psds(x, fs, window, segment_len, noverlap)
        if freqs is None:
            freqs = f
            total = np.zeros(len(f))
            total_sq = np.zeros(len(f))
        total += spec.sum(axis=1)
        total_sq += (spec**2).sum(axis=1)
        count += spec.shape[1]
    if count < MIN_SEGMENTS:
        raise ParameterError(
            f"only {count} segments available; need >= {MIN_SEGMENTS} for averaging"
        )
    mean = total / count
    var = np.maximum(total_sq - count * mean**2, 0.0) / (count - 1)
    stderr = np.sqrt(var / count)
    return PsdEstimate(
        freqs=freqs,
        values=mean / calibration,
        stderr=stderr / calibration,
        segments=count,
        window=window,
        calibration=calibration,
    )


def white_calibration(
    dt: float,
    segment_len: int,
    overlap: float = 0.5,
    window: str = "hann",
    seed: int = 0,
    n_segments: int = 256,
) -> float:
    """Measured SQL level of the estimator on synthetic vacuum noise.

    Runs ``w/sqrt(dt)`` white noise through :func:`estimate_psd` and returns
    the flat level (mean over all bins); ideally 1, and dividing by the
    measured value removes any window or scaling convention sensitivity.
    """
    step = segment_len - int(round(segment_len * overlap))
    n = segment_len + step * (n_segments - 1)
    rng = _noise_stream(seed, _CALIBRATION_STREAM)
    x = rng.standard_normal(n) / math.sqrt(dt)
    est = estimate_psd(x, dt, segment_len, overlap, window, calibration=1.0)
    return float(est.values.mean())


def mc_output_spectrum(
    p: OpoParams,
    cfg: SimConfig,
    psi: float,
    segment_len: int,
    overlap: float = 0.5,
    window: str = "hann",
    band: tuple | None = None,
    calibration: float | None = None,
    feedthrough: bool = True,
):
    """Ensemble Welch spectra of the rotated output pair.

    Streams ``cfg.n_realizations`` independent realizations through shared
    buffers and pools their segments; returns ``(psd_plus, psd_minus)`` on
    the normalized frequency grid, optionally restricted to ``band =
    (delta_lo, delta_hi]``.  ``feedthrough=False`` drops the coupler-noise
    feedthrough from the output (negative control; breaks vacuum flatness).

    With ``calibration=None`` the estimator SQL is measured on white noise
    from a reserved Philox stream of the same seed.
    """
    _validate(p, cfg)
    if not 0.0 <= overlap <= 0.9:
        raise ParameterError(f"overlap={overlap:g} not in [0, 0.9]")
    if calibration is None:
        calibration = white_calibration(
            cfg.dt, segment_len, overlap, window, seed=cfg.seed
        )
    n = cfg.n_steps
    kept = n - cfg.burn_in
    if kept < segment_len:
        raise ParameterError(
            f"only {kept} post-burn-in samples per realization; segment_len={segment_len}"
        )
    noverlap = int(round(segment_len * overlap))
    fs = 1.0 / cfg.dt
    w_couple = np.empty((n, 2))
    w_loss = np.empty((n, 2))
    q_intra = np.empty((n, 2))
    q_out = np.empty((n, 2))
    rotated = np.empty((kept, 2))
    u_t = _rotation(psi).T
    inv_sq = 1.0 / math.sqrt(cfg.dt)
    freqs = None
    mask = None
    total = total_sq = None
    count = 0
    for r in range(cfg.n_realizations):
        rng = _noise_stream(cfg.seed, r)
        rng.standard_normal(out=w_couple)
        rng.standard_normal(out=w_loss)
        integrate(
            p.gamma_plus, p.gamma_minus, p.kappa_plus, p.kappa_minus, p.epsilon,
            cfg.dt, w_couple, w_loss, q_intra, q_out,
        )
        if feedthrough:
            np.matmul(q_out[cfg.burn_in :], u_t, out=rotated)
        else:
            # sqrt(2 kappa) q alone: add the feedthrough term back
            np.multiply(w_couple, inv_sq, out=q_intra)
            q_intra += q_out
            np.matmul(q_intra[cfg.burn_in :], u_t, out=rotated)
        for ch in range(2):
            f, spec = _segment_psds(rotated[:, ch], fs, window, segment_len, noverlap)
            if freqs is None:
                delta_full = normalize_frequency(f, p.gamma_plus, p.gamma_minus)
                if band is None:
                    mask = np.ones(len(f), dtype=bool)
                else:
                    mask = (delta_full > band[0]) & (delta_full <= band[1])
                freqs = f[mask]
                total = np.zeros((2, mask.sum()))
                total_sq = np.zeros((2, mask.sum()))
            spec = spec[mask]
            total[ch] += spec.sum(axis=1)
            total_sq[ch] += (spec**2).sum(axis=1)
            if ch == 0:
                count += spec.shape[1]
    if count < MIN_SEGMENTS:
        raise ParameterError(
            f"only {count} segments accumulated; need >= {MIN_SEGMENTS}"
        )
    delta = normalize_frequency(freqs, p.gamma_plus, p.gamma_minus)
    out = []
    for ch in range(2):
        mean = total[ch] / count
        var = np.maximum(total_sq[ch] - count * mean**2, 0.0) / (count - 1)
        out.append(
            PsdEstimate(
                freqs=freqs,
                values=mean / calibration,
                stderr=np.sqrt(var / count) / calibration,
                segments=count,
                window=window,
                calibration=calibration,
                delta=delta,
            )
        )
    return out[0], out[1]


@dataclass
class ComparisonReport:
    """Per-bin z-score summary of an estimated versus analytic spectrum."""

    channel: str
    n_bins: int
    k_sigma: float
    fraction_within: float
    rms_rel: float
    worst_abs_z: float
    z: np.ndarray
    min_fraction: float | None = None
    max_rms: float | None = None

    @property
    def passed(self) -> bool:
        ok = True
        if self.min_fraction is not None:
            ok = ok and self.fraction_within >= self.min_fraction
        if self.max_rms is not None:
            ok = ok and self.rms_rel <= self.max_rms
        return ok

    def lines(self) -> list:
        status = "PASS" if self.passed else "FAIL"
        out = [
            f"channel {self.channel}: {self.n_bins} bins, "
            f"{self.fraction_within * 100:.2f}% within {self.k_sigma:g} sigma "
            f"(worst |z| = {self.worst_abs_z:.2f}), rms deviation {self.rms_rel * 100:.2f}%"
        ]
        req = []
        if self.min_fraction is not None:
            req.append(f"fraction >= {self.min_fraction * 100:g}%")
        if self.max_rms is not None:
            req.append(f"rms <= {self.max_rms * 100:g}%")
        if req:
            out.append(f"  thresholds: {', '.join(req)} -> {status}")
        return out


def compare_to_analytic(
    psd: PsdEstimate,
    analytic: NoiseSpectrum,
    k_sigma: float,
    channel: str = "minus",
    min_fraction: float | None = None,
    max_rms: float | None = None,
) -> ComparisonReport:
    """Bin-by-bin z-scores of a Welch estimate against an analytic spectrum.

    The analytic spectrum must be evaluated on the estimate's grid;
    thresholds are the caller's and determine ``passed``.
    """
    if psd.delta is None:
        raise GridMismatchError("PSD estimate carries no normalized frequency grid")
    if len(psd.delta) != len(analytic.delta) or not np.allclose(
        psd.delta, analytic.delta, rtol=1e-9, atol=1e-12
    ):
        raise GridMismatchError(
            f"grids differ: {len(psd.delta)} estimate bins vs {len(analytic.delta)} analytic"
        )
    if channel == "plus":
        expected = analytic.v_plus
    elif channel == "minus":
        expected = analytic.v_minus
    else:
        raise ValueError(f"channel must be 'plus' or 'minus', got {channel!r}")
    if np.any(psd.stderr <= 0):
        raise ParameterError("PSD standard errors must be positive for z-scores")
    z = (psd.values - expected) / psd.stderr
    rel = psd.values / expected - 1.0
    return ComparisonReport(
        channel=channel,
        n_bins=len(z),
        k_sigma=k_sigma,
        fraction_within=float(np.mean(np.abs(z) <= k_sigma)),
        rms_rel=float(np.sqrt(np.mean(rel**2))),
        worst_abs_z=float(np.max(np.abs(z))),
        z=z,
        min_fraction=min_fraction,
        max_rms=max_rms,
    )


def psd_pair_to_csv(
    psd_plus: PsdEstimate,
    psd_minus: PsdEstimate,
    meta: dict,
    reference: str,
    path: str | None = None,
) -> str:
    """Emit a channel pair in the sweep CSV schema plus stderr columns."""
    if psd_plus.delta is None or psd_minus.delta is None:
        raise ParameterError("PSD estimates need a delta grid for CSV output")
    meta = dict(meta)
    meta.setdefault("segments", psd_plus.segments)
    meta.setdefault("window", psd_plus.window)
    meta.setdefault("calibration", psd_plus.calibration)
    meta.setdefault("reference", reference)
    with np.errstate(divide="ignore"):
        columns = {
            "delta": psd_plus.delta,
            "f_hz": psd_plus.freqs,
            "v_plus": psd_plus.values,
            "v_minus": psd_minus.values,
            "v_plus_db": 10.0 * np.log10(psd_plus.values),
            "v_minus_db": 10.0 * np.log10(psd_minus.values),
            "reference": [reference] * len(psd_plus.values),
            "stderr_plus": psd_plus.stderr,
            "stderr_minus": psd_minus.stderr,
        }
    if path is not None:
        write_table(path, meta, columns)
    return render_table(meta, columns)


def dump_timeseries(bundle: TimeSeriesBundle, path: str) -> None:
    """Binary dump of the output pair.

    Layout: a 128-byte ASCII header (magic ``NDOPOTS1`` then space-separated
    ``key=value`` pairs, space-padded) followed by the output samples as
    64-bit little-endian floats interleaved ``q_plus, q_minus``.
    """
    p = bundle.params
    header = (
        f"{_MAGIC.decode()} gp={p.gamma_plus:.9g} gm={p.gamma_minus:.9g} "
        f"kp={p.kappa_plus:.9g} km={p.kappa_minus:.9g} eps={p.epsilon:.9g} "
        f"dt={bundle.dt:.9g} n={len(bundle.q_out)}"
    ).encode()
    if len(header) > _HEADER_SIZE:
        raise ValueError("header does not fit in 128 bytes")
    header = header.ljust(_HEADER_SIZE)
    payload = np.ascontiguousarray(bundle.q_out, dtype="<f8").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ndopo-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_timeseries(path: str):
    """Read a dump back: returns ``(header_fields, q_out array (n, 2))``."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_SIZE)
        payload = fh.read()
    if not header.startswith(_MAGIC):
        raise ValueError(f"{path}: not a time-series dump (bad magic)")
    fields = {}
    for token in header.decode().split()[1:]:
        key, _, value = token.partition("=")
        fields[key] = int(value) if key == "n" else float(value)
    data = np.frombuffer(payload, dtype="<f8").reshape(-1, 2)
    if "n" in fields and len(data) != fields["n"]:
        raise ValueError(f"{path}: expected {fields['n']} samples, found {len(data)}")
    return fields, data
