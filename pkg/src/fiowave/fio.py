"""Spectral solution of the plane-strain elastodynamics problem at sensor points.

A vertical point-like force ``g(x,y) h(t)`` drives a full-space, isotropic,
linearly elastic 2D medium that is at rest for t < 0.  After a Helmholtz
split into pressure and shear potentials, the displacement spectrum is a pair
of time-integrated sine kernels (one per wave branch)::

    u1_hat(xi,eta,t) = int_0^t [ S_l - S_s ] * (xi*eta/k^2) * g_hat * h(s) ds
    u2_hat(xi,eta,t) = int_0^t [ S_l*eta^2 + S_s*xi^2 ] / k^2 * g_hat * h(s) ds

with ``S_b = sin(c_b (t-s) k) / (c_b k)``, ``k = sqrt(xi^2 + eta^2)`` and the
regularized source spectrum ``g_hat = exp(-eps^2 k^2)``.  Sensor signals are
the inverse transform evaluated by rectangular quadrature on the dual grid of
the square computational domain.  Sampling the spectrum on that dual grid is
equivalent to periodizing the solution over the domain; since no wave front
can cross half the domain within the simulated window, the periodic images
never reach the sensors and the quadrature is effectively exact in (xi, eta).

Evaluation strategy: for a sensor at (x, y) the frequency sum collapses onto
radial kernels

    G(y') = sum_k B(k) * sin(k * y'),   B(k) = sum over nodes with |k| fixed,

which are tabulated once per sensor on a fine y'-grid.  A solve for wave
speeds (c_l, c_s) then reduces to interpolating G at y' = c*dt*m and a short
discrete convolution with the force history - exactly the rectangular-rule
time integral.  This makes a full 8-sensor solve take milliseconds while
agreeing with the direct summation path (`exact_signals`, kept for tests) to
better than 1e-6 relative.

Stochastic media enter through space-dependent wave speeds: the signal at a
sensor uses c_l(x,y), c_s(x,y) frozen at the sensor location.  Spatial
derivatives of the perturbed parameters are neglected, which restricts
validity to weakly heterogeneous media (no backscattering or mode
conversion).  Degenerate zero-variance media reproduce the deterministic
solution bit-for-bit because both paths share the same kernels.

Internal unit system: cm - g - microsecond, so 1 GPa = 0.01 g/(cm*us^2) and
wave speeds come out in cm/us.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .random_field import FieldRealization, field_at

__all__ = [
    "GPA",
    "MaterialParams",
    "Excitation",
    "QuadratureGrid",
    "SensorArray",
    "SignalRecord",
    "StochasticMedium",
    "wave_speeds",
    "speeds_from_constants",
    "solve_deterministic",
    "solve_stochastic",
    "exact_signals",
    "dft_spectrum",
    "default_sensors",
]

GPA = 0.01  # 1 GPa in g/(cm*us^2)

# Spectrum truncation: drop dual-grid nodes where the regularized source has
# decayed below 1e-14 (they cannot move the signal at double precision).
_GHAT_FLOOR_LOG = -math.log(1e-14)

# Radial kernel tabulation density, interpolation points per oscillation
# period 2*pi/k_max.  48 points with 4-point Lagrange interpolation keeps the
# kernel error below ~1e-6 relative.
_KERNEL_PPP = 48


@dataclass(frozen=True)
class MaterialParams:
    """Nominal elastic constants: E in GPa, Poisson ratio, density in g/cm^3."""

    E: float
    nu: float
    rho: float

    def __post_init__(self):
        if not (np.isfinite(self.E) and self.E > 0):
            raise ValueError(f"E must be positive, got {self.E}")
        if not (np.isfinite(self.nu) and 0 < self.nu < 0.5):
            raise ValueError(f"nu must lie in (0, 0.5), got {self.nu}")
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")

    def lame(self) -> tuple[float, float]:
        """(lambda, mu) in g/(cm*us^2)."""
        e = self.E * GPA
        lam = e * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))
        mu = e / (2 * (1 + self.nu))
        return lam, mu


def speeds_from_constants(E_gpa: float, nu: float, rho: float) -> tuple[float, float]:
    """Pressure and shear wave speeds in cm/us for raw constants.

    c_l = sqrt(E/rho * (1-nu)/((1+nu)(1-2nu))), c_s = sqrt(E/rho / (2(1+nu))).
    """
    if not (np.isfinite(E_gpa) and E_gpa > 0):
        raise ValueError(f"E must be positive, got {E_gpa}")
    if not (np.isfinite(nu) and -1.0 < nu < 0.5):
        raise ValueError(f"nu must lie below 0.5 (wave speed singular), got {nu}")
    e_over_rho = E_gpa * GPA / rho
    c_l = math.sqrt(e_over_rho * (1 - nu) / ((1 + nu) * (1 - 2 * nu)))
    c_s = math.sqrt(e_over_rho / (2 * (1 + nu)))
    return c_l, c_s


def wave_speeds(mp: MaterialParams) -> tuple[float, float]:
    """(c_l, c_s) of a homogeneous medium, cm/us."""
    return speeds_from_constants(mp.E, mp.nu, mp.rho)


@dataclass(frozen=True)
class Excitation:
    """Regularized point source: width eps (cm) and a time profile.

    The built-in profile is the sine onset h(t) = sin(2*pi*t) for t >= 0 and
    zero before (body initially at rest).  Tabulated profiles interpolate
    linearly through `table` and vanish outside its support.
    """

    eps: float = 0.1
    profile: str = "sine"
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.profile == "sine":
            if self.table is not None:
                raise ValueError("sine profile takes no table")
        elif self.profile == "table":
            if not self.table or len(self.table) < 2:
                raise ValueError("tabulated profile needs at least two samples")
            ts = [p[0] for p in self.table]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("table times must be strictly increasing")
            if any(t < 0 and v != 0 for t, v in self.table):
                raise ValueError("profile must vanish for t < 0")
        else:
            raise ValueError(f"unknown profile {self.profile!r}")

    def h(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.profile == "sine":
            return np.where(t >= 0, np.sin(2 * np.pi * t), 0.0)
        ts = np.array([p[0] for p in self.table])
        vs = np.array([p[1] for p in self.table])
        return np.interp(t, ts, vs, left=0.0, right=0.0)


@dataclass(frozen=True)
class QuadratureGrid:
    """Dual-grid and time discretization.

    n_xi x n_eta frequency nodes span the DFT dual of the square domain
    (spacing 2*pi/domain, cutoff pi*n/domain per axis); the time axis runs
    from dt to tmax inclusive in steps of dt.
    """

    n_xi: int = 256
    n_eta: int = 256
    dt: float = 0.05
    tmax: float = 7.0
    domain: float = 10.0

    def __post_init__(self):
        if self.n_xi < 2 or self.n_eta < 2:
            raise ValueError("need at least 2 frequency nodes per axis")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.tmax < self.dt:
            raise ValueError("tmax must be at least dt")
        if not (np.isfinite(self.domain) and self.domain > 0):
            raise ValueError(f"domain must be positive, got {self.domain}")

    @property
    def n_t(self) -> int:
        return int(round(self.tmax / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_t + 1)


@dataclass(frozen=True)
class SensorArray:
    """Sensor ids and coordinates (cm)."""

    sensors: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        ids = [s[0] for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor ids must be unique")

    def __len__(self) -> int:
        return len(self.sensors)

    @property
    def ids(self) -> list[int]:
        return [s[0] for s in self.sensors]

    def positions(self) -> list[tuple[float, float]]:
        return [(s[1], s[2]) for s in self.sensors]

    def position_of(self, sensor_id: int) -> tuple[float, float]:
        for sid, x, y in self.sensors:
            if sid == sensor_id:
                return (x, y)
        raise KeyError(f"unknown sensor id {sensor_id}")

    def validate_inside(self, domain: float) -> None:
        half = domain / 2.0
        for sid, x, y in self.sensors:
            if abs(x) > half or abs(y) > half:
                raise ValueError(f"sensor {sid} at ({x}, {y}) outside domain of size {domain}")


def default_sensors() -> SensorArray:
    """The eight sensors ringing the central source at +/-1.17 cm offsets."""
    d = 1.17
    return SensorArray(
        (
            (1, -d, -d),
            (2, 0.0, -d),
            (3, d, -d),
            (4, -d, 0.0),
            (5, d, 0.0),
            (6, -d, d),
            (7, 0.0, d),
            (8, d, d),
        )
    )


@dataclass
class SignalRecord:
    """Time-sampled displacement components at one sensor (cm vs us)."""

    sensor_id: int
    times: np.ndarray
    ux: np.ndarray
    uy: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.ux = np.asarray(self.ux, dtype=float)
        self.uy = np.asarray(self.uy, dtype=float)
        if not (len(self.times) == len(self.ux) == len(self.uy)):
            raise ValueError("times, ux, uy must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class StochasticMedium:
    """Random medium: E and nu field realizations plus a constant density.

    Both fields must share a bounding box that covers every sensor.  Sampled
    Poisson ratios are clamped to [0.05, 0.45] when converted to wave speeds;
    at the coefficients of variation of interest the clamp never activates.
    """

    E_field: FieldRealization
    nu_field: FieldRealization
    rho: float

    NU_CLAMP = (0.05, 0.45)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if np.any(self.E_field.values <= 0):
            raise ValueError("E field must be positive everywhere")

    def speeds_at(self, x: float, y: float) -> tuple[float, float]:
        e = field_at(self.E_field, x, y)
        nu = field_at(self.nu_field, x, y)
        nu = min(max(nu, self.NU_CLAMP[0]), self.NU_CLAMP[1])
        return speeds_from_constants(e, nu, self.rho)


# ---------------------------------------------------------------------------
# Solver session: dual grid, per-sensor radial kernels, force history.
# ---------------------------------------------------------------------------


class _Session:
    def __init__(self, quad: QuadratureGrid, ex: Excitation):
        self.quad = quad
        self.ex = ex

        xi = 2 * np.pi * np.fft.fftfreq(quad.n_xi, d=quad.domain / quad.n_xi)
        eta = 2 * np.pi * np.fft.fftfreq(quad.n_eta, d=quad.domain / quad.n_eta)
        XI, ETA = np.meshgrid(xi, eta, indexing="ij")
        k2 = XI**2 + ETA**2
        keep = (k2 > 0) & (ex.eps**2 * k2 <= _GHAT_FLOOR_LOG)
        self.xi = XI[keep]
        self.eta = ETA[keep]
        k = np.sqrt(k2[keep])
        self.ghat = np.exp(-(ex.eps**2) * k2[keep])
        self.k_unique, self.k_inverse = np.unique(k, return_inverse=True)
        self.k3 = k**3
        # rectangular quadrature weight times the (2*pi)^-2 of the inverse
        # transform; equals 1/domain^2 for the DFT dual grid
        dxi = 2 * np.pi / quad.domain
        self.norm = dxi * dxi / (2 * np.pi) ** 2

        n_t = quad.n_t
        self.s = quad.dt * np.arange(n_t + 1)
        self.h = ex.h(self.s)
        # zero-frequency node of u2: double left-rectangular integral of h
        inner = np.concatenate([[0.0], np.cumsum(self.h[:-1]) * quad.dt])
        self.dd = np.concatenate([[0.0], np.cumsum(inner[:-1]) * quad.dt])[1:]

        kmax = float(self.k_unique[-1])
        self.dy = 2 * np.pi / (kmax * _KERNEL_PPP)
        self._ymax = 0.0
        self._gtab: dict[tuple[float, float], np.ndarray] = {}
        self._btab: dict[tuple[float, float], np.ndarray] = {}

    # -- per-sensor spectral weights ---------------------------------------

    def _bvectors(self, pos: tuple[float, float]) -> np.ndarray:
        """Stack of radial weights B1, B2l, B2s (complex, one row per unique k)."""
        cached = self._btab.get(pos)
        if cached is not None:
            return cached
        x, y = pos
        phase = np.exp(1j * (x * self.xi + y * self.eta))
        a1 = self.xi * self.eta * self.ghat / self.k3
        a2l = self.eta**2 * self.ghat / self.k3
        a2s = self.xi**2 * self.ghat / self.k3
        nbins = len(self.k_unique)
        stack = np.empty((nbins, 3), dtype=complex)
        for col, amp in enumerate((a1, a2l, a2s)):
            w = phase * amp
            stack[:, col] = np.bincount(
                self.k_inverse, weights=w.real, minlength=nbins
            ) + 1j * np.bincount(self.k_inverse, weights=w.imag, minlength=nbins)
        self._btab[pos] = stack
        return stack

    # -- radial kernel tables -----------------------------------------------

    def _ensure_tables(self, positions: list[tuple[float, float]], cmax: float) -> None:
        need_y = 1.02 * cmax * self.quad.tmax
        if need_y > self._ymax:
            self._ymax = max(1.3 * need_y, self._ymax)
            self._gtab.clear()
        missing = [p for p in positions if p not in self._gtab]
        if not missing:
            return
        n_y = int(math.ceil(self._ymax / self.dy)) + 4
        ys = self.dy * np.arange(n_y)
        bstack = np.hstack([self._bvectors(p) for p in missing])  # (K, 3*m)
        breal = np.hstack([bstack.real, bstack.imag])  # (K, 6*m)
        g = np.zeros((n_y, breal.shape[1]))
        chunk = 512
        for lo in range(0, len(self.k_unique), chunk):
            hi = min(lo + chunk, len(self.k_unique))
            sin_block = np.sin(np.outer(ys, self.k_unique[lo:hi]))
            g += sin_block @ breal[lo:hi]
        m = len(missing)
        for i, p in enumerate(missing):
            re = g[:, 3 * i : 3 * i + 3]
            im = g[:, 3 * m + 3 * i : 3 * m + 3 * i + 3]
            self._gtab[p] = re + 1j * im  # (n_y, 3): G1, G2l, G2s

    def _kernel_at(self, pos: tuple[float, float], c: float) -> np.ndarray:
        """G1, G2l, G2s sampled at y = c*dt*m, m = 0..n_t (Lagrange-4)."""
        tab = self._gtab[pos]
        y = c * self.quad.dt * np.arange(self.quad.n_t + 1)
        u = y / self.dy
        i0 = np.floor(u).astype(int)
        th = u - i0
        # odd extension below zero handles the first stencil row (G(-y) = -G(y))
        im1 = np.abs(i0 - 1)
        sgn = np.where(i0 - 1 < 0, -1.0, 1.0)
        w_m1 = -th * (th - 1) * (th - 2) / 6.0
        w_0 = (th * th - 1) * (th - 2) / 2.0
        w_p1 = -th * (th + 1) * (th - 2) / 2.0
        w_p2 = th * (th * th - 1) / 6.0
        return (
            (sgn * w_m1)[:, None] * tab[im1]
            + w_0[:, None] * tab[i0]
            + w_p1[:, None] * tab[i0 + 1]
            + w_p2[:, None] * tab[i0 + 2]
        )

    # -- signal assembly ----------------------------------------------------

    def signals(
        self,
        speeds: list[tuple[float, float]],
        positions: list[tuple[float, float]],
        sensor_ids: list[int],
    ) -> list[SignalRecord]:
        cmax = max(max(c) for c in speeds)
        self._ensure_tables(positions, cmax)
        n_t = self.quad.n_t
        times = self.quad.times
        records = []
        max_re = 0.0
        max_im = 0.0
        for (c_l, c_s), pos, sid in zip(speeds, positions, sensor_ids):
            ker_l = self._kernel_at(pos, c_l)
            ker_s = self._kernel_at(pos, c_s)
            conv = lambda g: np.convolve(self.h, g)[1 : n_t + 1]
            scale = self.norm * self.quad.dt
            u1 = scale * (conv(ker_l[:, 0]) / c_l - conv(ker_s[:, 0]) / c_s)
            u2 = scale * (conv(ker_l[:, 1]) / c_l + conv(ker_s[:, 2]) / c_s)
            u2 = u2 + self.norm * self.dd
            max_re = max(max_re, np.abs(u1.real).max(), np.abs(u2.real).max())
            max_im = max(max_im, np.abs(u1.imag).max(), np.abs(u2.imag).max())
            records.append(SignalRecord(sid, times, u1.real.copy(), u2.real.copy()))
        if max_re > 0 and max_im > 1e-8 * max_re:
            raise RuntimeError(
                f"imaginary residue {max_im:.3e} exceeds 1e-8 of max amplitude {max_re:.3e}"
            )
        return records


_SESSIONS: dict[tuple[QuadratureGrid, Excitation], _Session] = {}


def _session(quad: QuadratureGrid, ex: Excitation) -> _Session:
    key = (quad, ex)
    ses = _SESSIONS.get(key)
    if ses is None:
        ses = _Session(quad, ex)
        _SESSIONS[key] = ses
    return ses


def solve_deterministic(
    mp: MaterialParams,
    ex: Excitation,
    quad: QuadratureGrid,
    sensors: SensorArray,
) -> list[SignalRecord]:
    """Sensor signals for a homogeneous medium.

    Rectangular quadrature on the dual grid and in the time integral; output
    is the real part of the inverse transform after checking that the
    imaginary residue stays below 1e-8 of the peak amplitude.
    """
    if len(sensors) == 0:
        raise ValueError("sensor list is empty")
    sensors.validate_inside(quad.domain)
    ses = _session(quad, ex)
    c = wave_speeds(mp)
    pos = sensors.positions()
    return ses.signals([c] * len(pos), pos, sensors.ids)


def solve_stochastic(
    sm: StochasticMedium,
    ex: Excitation,
    quad: QuadratureGrid,
    sensors: SensorArray,
) -> list[SignalRecord]:
    """Sensor signals for a randomly perturbed medium.

    Identical quadrature to :func:`solve_deterministic`; the perturbation
    enters through the wave speeds evaluated at each sensor location, so a
    zero-variance medium reproduces the deterministic solution exactly.
    """
    if len(sensors) == 0:
        raise ValueError("sensor list is empty")
    sensors.validate_inside(quad.domain)
    ses = _session(quad, ex)
    pos = sensors.positions()
    speeds = [sm.speeds_at(x, y) for (x, y) in pos]
    return ses.signals(speeds, pos, sensors.ids)


def exact_signals(
    speeds: tuple[float, float],
    ex: Excitation,
    quad: QuadratureGrid,
    sensors: SensorArray,
) -> list[SignalRecord]:
    """Direct dense summation over the dual grid (verification oracle).

    Evaluates the same rectangular-rule quadrature without the radial-kernel
    tabulation; used to bound the interpolation error of the fast path.
    """
    ses = _session(quad, ex)
    c_l, c_s = speeds
    n_t = quad.n_t
    dt = quad.dt
    records = []

    def w_matrix(c: float) -> np.ndarray:
        # T(k, t_i) = dt * sum_j sin(c k (t_i - s_j)) h_j via complex cumsum
        E = np.exp(-1j * c * np.outer(ses.k_unique, ses.s))
        A = np.cumsum(E * (ses.h * dt), axis=1)
        W = (E.real * A.imag - E.imag * A.real)[:, 1:]
        return W  # (K, n_t)

    W_l = w_matrix(c_l)
    W_s = w_matrix(c_s)
    for sid, x, y in sensors.sensors:
        b = ses._bvectors((x, y))
        u1 = ses.norm * (W_l.T @ b[:, 0] / c_l - W_s.T @ b[:, 0] / c_s)
        u2 = ses.norm * (W_l.T @ b[:, 1] / c_l + W_s.T @ b[:, 2] / c_s)
        u2 = u2 + ses.norm * ses.dd
        records.append(SignalRecord(sid, quad.times, u1.real.copy(), u2.real.copy()))
    return records


def dft_spectrum(sig: SignalRecord) -> tuple[np.ndarray, np.ndarray]:
    """DFT of both displacement components.

    Bin k corresponds to angular frequency 2*pi*k/T_max (rad/us) on the
    uniform record.  Uses the forward convention X_k = sum_m x_m e^{-2pi i km/n},
    under which a later-arriving signal has a smaller bin-k phase angle.
    """
    if len(sig.times) < 4:
        raise ValueError("need at least 4 samples for a spectrum")
    steps = np.diff(sig.times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("spectrum requires uniform time sampling")
    return np.fft.fft(sig.ux), np.fft.fft(sig.uy)
