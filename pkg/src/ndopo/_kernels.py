"""Time-stepping kernels for the stochastic simulator.

The Euler-Maruyama recursion is the hot loop of the package.  Two
implementations share one contract:

* a scalar loop compiled with numba's ``@njit`` (default), and
* a vectorized numpy/scipy path that evaluates the identical linear
  recursion through an eigenbasis scan (``scipy.signal.lfilter``), used when
  numba is unavailable or disabled with ``NDOPO_DISABLE_NUMBA=1``.

Both fill the caller-provided output arrays; the compiled loop is
bit-identical to its Python source, and the vectorized path agrees to
~1e-12 (same recursion, different rounding order).  ``benchmarks/
bench_kernels.py`` times the two side by side.
"""

import math
import os

import numpy as np
from scipy import signal

__all__ = ["numba_available", "numba_enabled", "integrate", "KERNEL_PATHS"]

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False

KERNEL_PATHS = ("numba", "numpy")


def numba_available() -> bool:
    return _HAVE_NUMBA


def numba_enabled() -> bool:
    """True when the compiled kernel will be used.

    Set ``NDOPO_DISABLE_NUMBA=1`` to force the numpy fallback; checked per
    call so tests can flip it at runtime.
    """
    if os.environ.get("NDOPO_DISABLE_NUMBA", "0").lower() not in ("", "0", "false"):
        return False
    return _HAVE_NUMBA


def _step_loop(gp, gm, kp, km, eps, dt, w_couple, w_loss, q_intra, q_out):
    # q[n+1] = q[n] + M q[n] dt + sqrt(2 kappa dt) w_a + sqrt(2 (gamma-kappa) dt) w_b
    # q_out[n] = sqrt(2 kappa) q[n] - w_a[n]/sqrt(dt)   (same-step coupler noise)
    c = eps * math.sqrt(gp * gm)
    ap = math.sqrt(2.0 * kp)
    am = math.sqrt(2.0 * km)
    bp = math.sqrt(2.0 * (gp - kp))
    bm = math.sqrt(2.0 * (gm - km))
    sq = math.sqrt(dt)
    inv = 1.0 / sq
    qp = 0.0
    qm = 0.0
    for i in range(w_couple.shape[0]):
        q_intra[i, 0] = qp
        q_intra[i, 1] = qm
        q_out[i, 0] = ap * qp - w_couple[i, 0] * inv
        q_out[i, 1] = am * qm - w_couple[i, 1] * inv
        dp = (-gp * qp + c * qm) * dt + ap * sq * w_couple[i, 0] + bp * sq * w_loss[i, 0]
        dm = (c * qp - gm * qm) * dt + am * sq * w_couple[i, 1] + bm * sq * w_loss[i, 1]
        qp += dp
        qm += dm


if _HAVE_NUMBA:
    _step_loop_jit = njit(cache=True)(_step_loop)


def _step_numpy(gp, gm, kp, km, eps, dt, w_couple, w_loss, q_intra, q_out):
    # Same recursion as _step_loop: the one-step matrix A = 1 + M dt is
    # symmetric, so an orthogonal eigenbasis turns the coupled update into
    # two scalar AR(1) scans handled by lfilter.
    c = eps * math.sqrt(gp * gm)
    a_vec = np.array([math.sqrt(2.0 * kp), math.sqrt(2.0 * km)])
    b_vec = np.array([math.sqrt(2.0 * (gp - kp)), math.sqrt(2.0 * (gm - km))])
    sq = math.sqrt(dt)
    one_step = np.array([[1.0 - gp * dt, c * dt], [c * dt, 1.0 - gm * dt]])
    lam, basis = np.linalg.eigh(one_step)
    drive = (w_couple * (sq * a_vec) + w_loss * (sq * b_vec)) @ basis
    for i in range(2):
        drive[:, i] = signal.lfilter([1.0], [1.0, -lam[i]], drive[:, i])
    q_intra[0] = 0.0
    np.matmul(drive[:-1], basis.T, out=q_intra[1:])
    np.multiply(q_intra, a_vec, out=q_out)
    q_out -= w_couple * (1.0 / sq)


def integrate(gp, gm, kp, km, eps, dt, w_couple, w_loss, q_intra, q_out, path=None):
    """Fill ``q_intra``/``q_out`` with one realization of the cavity dynamics.

    ``w_couple``/``w_loss`` are (n, 2) arrays of unit normals for the coupler
    and residual-loss ports.  ``path`` overrides the automatic kernel choice
    ('numba' or 'numpy'); the default follows :func:`numba_enabled`.
    """
    if path is None:
        path = "numba" if numba_enabled() else "numpy"
    if path == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba kernel requested but numba is not installed")
        _step_loop_jit(gp, gm, kp, km, eps, dt, w_couple, w_loss, q_intra, q_out)
    elif path == "numpy":
        _step_numpy(gp, gm, kp, km, eps, dt, w_couple, w_loss, q_intra, q_out)
    else:
        raise ValueError(f"unknown kernel path {path!r}; expected one of {KERNEL_PATHS}")
