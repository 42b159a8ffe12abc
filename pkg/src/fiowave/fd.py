"""Finite-difference plane-strain elastodynamics on a staggered grid.

Independent reference solver used to manufacture "measured" sensor data for
calibrating and testing the spectral solver, including damaged-specimen
scenarios.  It discretizes the variable-coefficient equations of motion in
first-order velocity-stress form,

    rho dv/dt = div sigma + F,    dsigma/dt = C(x) : grad_s v,

on a standard staggered lattice (normal stresses on nodes, vx/vy on edge
midpoints, shear stress on cell centers) with fourth-order staggered
differences and leapfrog time stepping.  The conservative form honors
heterogeneous coefficients, so - unlike the frozen-coefficient spectral
model - scattering from local stiffness changes (e.g. a crack) is captured.

The scheme conserves a discrete energy, and the time step is bounded by the
usual stability limit; `fd_solve` substeps automatically below it and errors
out if an explicitly requested step violates it.  The domain boundary is
held fixed, which is immaterial as long as no wave reaches it within the
simulated window (the default geometry guarantees a reflection path much
longer than c_l * tmax).

The force acts in the y-direction at the domain center and is scaled by rho
to match the spectral solver's normalization (there the force term carries an
implicit 1/rho).  By default it is stamped onto the vy samples as the same
Gaussian mollifier the spectral solver uses for its source, so both solvers
target the identical well-posed problem: a literal single-node load makes the
2D shear arrival an inverse-square-root singularity whose peak grows without
bound under refinement, which no smooth reference can match.  Passing
``source_width=0`` restores the raw point load (split over the two samples
straddling y = 0 so the mirror symmetries survive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fio import GPA, Excitation, MaterialParams, SensorArray, SignalRecord
from .random_field import (
    FieldRealization,
    FieldSampler,
    GridSpec,
    RandomFieldSpec,
    field_at,
)

__all__ = [
    "HeterogeneousMedium",
    "CrackRegion",
    "DamageScenario",
    "scenario_field_specs",
    "make_scenario",
    "fd_solve",
    "snap_sensors",
    "max_stable_dt",
]

# stability constant of the 4th-order staggered leapfrog update in 2D:
# dt <= h / (c_max * sqrt(2) * (9/8 + 1/24))
_CFL_COEF = 1.0 / (math.sqrt(2.0) * (9.0 / 8.0 + 1.0 / 24.0))
_CFL_SAFETY = 0.95

# Gaussian stiffness fields have unbounded lower tails; physical media do not.
# Sampled E values are floored here before conversion to Lame parameters.
E_FLOOR_GPA = 0.5
NU_CLAMP = (0.05, 0.45)

_D_A = 9.0 / 8.0
_D_B = 1.0 / 24.0


@dataclass
class HeterogeneousMedium:
    """Lame parameter fields on the FD node lattice, in g/(cm*us^2).

    ``grid`` describes the (n+1) x (n+1) nodes of an n-cell square domain;
    ``lam`` and ``mu`` are node arrays indexed [ix, iy].
    """

    grid: GridSpec
    lam: np.ndarray
    mu: np.ndarray
    rho: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        shape = (self.grid.nx, self.grid.ny)
        if self.lam.shape != shape or self.mu.shape != shape:
            raise ValueError("lam/mu shapes must match the node grid")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if np.any(self.mu <= 0) or np.any(self.lam + 2 * self.mu <= 0):
            raise ValueError("medium not hyperbolic: need mu > 0 and lam + 2 mu > 0")

    @property
    def n_cells(self) -> int:
        return self.grid.nx - 1

    @property
    def h(self) -> float:
        return self.grid.dx

    def c_l_max(self) -> float:
        return math.sqrt(float((self.lam + 2 * self.mu).max()) / self.rho)

    @classmethod
    def homogeneous(cls, mp: MaterialParams, n: int, domain: float = 10.0) -> "HeterogeneousMedium":
        grid = GridSpec.centered(n + 1, domain)
        lam, mu = mp.lame()
        shape = (n + 1, n + 1)
        return cls(grid, np.full(shape, lam), np.full(shape, mu), mp.rho)

    @classmethod
    def from_fields(
        cls,
        E_field: FieldRealization,
        nu_field: FieldRealization,
        rho: float,
        n: int,
        domain: float = 10.0,
        crack: "CrackRegion | None" = None,
    ) -> "HeterogeneousMedium":
        """Interpolate E/nu realizations onto the FD nodes and convert to Lame.

        Poisson ratios are clamped to [0.05, 0.45] and stiffness floored at
        E_FLOOR_GPA; both guards are inactive at small coefficients of
        variation.  A crack region overwrites E before conversion.
        """
        grid = GridSpec.centered(n + 1, domain)
        X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
        e = field_at(E_field, X.ravel(), Y.ravel()).reshape(X.shape)
        nu = field_at(nu_field, X.ravel(), Y.ravel()).reshape(X.shape)
        e = np.maximum(e, E_FLOOR_GPA)
        nu = np.clip(nu, NU_CLAMP[0], NU_CLAMP[1])
        if crack is not None:
            inside = (np.abs(X - crack.cx) <= crack.width / 2.0) & (
                np.abs(Y - crack.cy) <= crack.height / 2.0
            )
            e = np.where(inside, crack.e_gpa, e)
        e_cgs = e * GPA
        lam = e_cgs * nu / ((1 + nu) * (1 - 2 * nu))
        mu = e_cgs / (2 * (1 + nu))
        return cls(grid, lam, mu, rho)


@dataclass(frozen=True)
class CrackRegion:
    """Soft rectangular inclusion standing in for a crack."""

    cx: float
    cy: float
    width: float
    height: float
    e_gpa: float

    def __post_init__(self):
        if self.e_gpa <= 0:
            raise ValueError("degraded E must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("crack extent must be positive")

    def validate_inside(self, domain: float) -> None:
        half = domain / 2.0
        if (
            abs(self.cx) + self.width / 2.0 >= half
            or abs(self.cy) + self.height / 2.0 >= half
        ):
            raise ValueError("crack region must lie strictly inside the domain")


# crack default: a 0.1 x 0.4 cm soft bar at 1% of nominal stiffness, centered
# on the ray from the source to sensor 3 at (1.17, -1.17) and oriented
# transverse to it so the bar actually intersects the propagation path
DEFAULT_CRACK = CrackRegion(0.6, -0.6, 0.1, 0.4, 0.7)


@dataclass(frozen=True)
class DamageScenario:
    """Specimen variants: S1 nominal, S2 soft, S3 stiff, S4 cracked."""

    tag: str
    e_mean: float = 70.0
    crack: CrackRegion | None = None

    _KNOWN = ("S1", "S2", "S3", "S4")

    def __post_init__(self):
        if self.tag not in self._KNOWN:
            raise ValueError(f"unknown scenario tag {self.tag!r}")
        if self.e_mean <= 0:
            raise ValueError("e_mean must be positive")
        if self.tag == "S4" and self.crack is None:
            object.__setattr__(self, "crack", DEFAULT_CRACK)
        if self.tag != "S4" and self.crack is not None:
            raise ValueError("only S4 carries a crack region")

    @staticmethod
    def by_tag(tag: str) -> "DamageScenario":
        means = {"S1": 70.0, "S2": 60.0, "S3": 80.0, "S4": 70.0}
        return DamageScenario(tag, means[tag], DEFAULT_CRACK if tag == "S4" else None)


def scenario_field_specs(
    sc: DamageScenario,
    seed: int,
    sigma_e: float = 3.5,
    corr_e: float = 3.0,
    nu_mean: float = 0.35,
    sigma_nu: float = 0.005,
    corr_nu: float = 3.0,
) -> tuple[RandomFieldSpec, RandomFieldSpec]:
    """Field hyperparameters realizing a scenario under a shared seed."""
    from .random_field import derive_seed

    return (
        RandomFieldSpec(sc.e_mean, sigma_e, corr_e, derive_seed(seed, 0)),
        RandomFieldSpec(nu_mean, sigma_nu, corr_nu, derive_seed(seed, 1)),
    )


def make_scenario(
    sc: DamageScenario,
    e_spec: RandomFieldSpec,
    nu_spec: RandomFieldSpec,
    rho: float = 2.70,
    n: int = 256,
    domain: float = 10.0,
    field_grid_n: int = 64,
) -> HeterogeneousMedium:
    """Sample the scenario's random fields and materialize an FD medium.

    The mean of ``e_spec`` must already reflect the scenario (use
    :func:`scenario_field_specs`); S4 additionally overwrites the crack
    region with its degraded stiffness.
    """
    if sc.crack is not None:
        sc.crack.validate_inside(domain)
    fgrid = GridSpec.centered(field_grid_n, domain)
    e_field = FieldSampler(e_spec, fgrid, "GPa").sample_with_seed(e_spec.seed)
    nu_field = FieldSampler(nu_spec, fgrid).sample_with_seed(nu_spec.seed)
    return HeterogeneousMedium.from_fields(e_field, nu_field, rho, n, domain, crack=sc.crack)


def snap_sensors(sensors: SensorArray, n: int, domain: float = 10.0) -> SensorArray:
    """Sensors moved to their nearest FD nodes (the recorded coordinates)."""
    h = domain / n
    snapped = []
    for sid, x, y in sensors.sensors:
        ix = int(round((x + domain / 2.0) / h))
        iy = int(round((y + domain / 2.0) / h))
        snapped.append((sid, -domain / 2.0 + ix * h, -domain / 2.0 + iy * h))
    return SensorArray(tuple(snapped))


def max_stable_dt(med: HeterogeneousMedium) -> float:
    return _CFL_COEF * med.h / med.c_l_max()


def _dx_node_to_half(f: np.ndarray, h: float) -> np.ndarray:
    # f sampled at integer x-offsets -> derivative at the N-1 half offsets
    p = np.pad(f, ((1, 1), (0, 0)))
    return (_D_A * (p[2:-1] - p[1:-2]) - _D_B * (p[3:] - p[:-3])) / h


def _dx_half_to_node(g: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(g, ((2, 2), (0, 0)))
    return (_D_A * (p[2:-1] - p[1:-2]) - _D_B * (p[3:] - p[:-3])) / h


def _dy_node_to_half(f: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(f, ((0, 0), (1, 1)))
    return (_D_A * (p[:, 2:-1] - p[:, 1:-2]) - _D_B * (p[:, 3:] - p[:, :-3])) / h


def _dy_half_to_node(g: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(g, ((0, 0), (2, 2)))
    return (_D_A * (p[:, 2:-1] - p[:, 1:-2]) - _D_B * (p[:, 3:] - p[:, :-3])) / h


_READOUT_W = np.array([-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0])


def fd_solve(
    med: HeterogeneousMedium,
    ex: Excitation | None,
    sensors: SensorArray,
    dt: float,
    tmax: float,
    internal_dt: float | None = None,
    energy_trace: bool = False,
    initial: dict | None = None,
    source_width: float | None = None,
):
    """Time-sampled displacements at (snapped) sensor locations.

    ``dt``/``tmax`` define the output grid (samples at dt, 2dt, ..., tmax).
    The solver substeps internally below the stability limit; passing
    ``internal_dt`` overrides the automatic choice and raises if it violates
    the limit.  ``ex=None`` disables forcing, ``initial`` may seed the state
    with arrays vx, vy, sxx, syy, sxy for free-oscillation experiments.
    ``source_width`` sets the Gaussian stamp width of the load in cm
    (default: the excitation's regularization width; 0 = single-node load).

    Returns a list of SignalRecord; with ``energy_trace=True`` a tuple
    (records, energies) where energies is the conserved discrete energy after
    every internal step.
    """
    n = med.n_cells
    h = med.h
    domain = med.grid.dx * n
    if dt <= 0 or tmax < dt:
        raise ValueError("need dt > 0 and tmax >= dt")
    n_out = int(round(tmax / dt))

    dt_limit = max_stable_dt(med)
    if internal_dt is not None:
        if internal_dt > dt_limit:
            raise ValueError(
                f"time step {internal_dt} violates the stability limit; "
                f"max stable dt = {dt_limit:.6g} us"
            )
        sub = max(1, int(round(dt / internal_dt)))
        if abs(sub * internal_dt - dt) > 1e-9 * dt:
            raise ValueError("internal_dt must divide the output step dt")
    else:
        sub = max(1, int(math.ceil(dt / (_CFL_SAFETY * dt_limit))))
    dti = dt / sub

    snapped = snap_sensors(sensors, n, domain)
    idx = []
    for sid, x, y in snapped.sensors:
        ix = int(round((x + domain / 2.0) / h))
        iy = int(round((y + domain / 2.0) / h))
        if not (2 <= ix <= n - 2 and 2 <= iy <= n - 2):
            raise ValueError(f"sensor {sid} too close to the domain boundary")
        idx.append((ix, iy))

    lam = med.lam
    mu = med.mu
    lam2mu = lam + 2 * mu
    # shear stiffness at cell centers: harmonic mean of the 4 corner nodes
    inv = 1.0 / mu
    mu_c = 4.0 / (inv[:-1, :-1] + inv[1:, :-1] + inv[:-1, 1:] + inv[1:, 1:])
    rho = med.rho

    vx = np.zeros((n, n + 1))
    vy = np.zeros((n + 1, n))
    sxx = np.zeros((n + 1, n + 1))
    syy = np.zeros((n + 1, n + 1))
    sxy = np.zeros((n, n))
    ux = np.zeros((n, n + 1))
    uy = np.zeros((n + 1, n))
    if initial:
        for name, arr in (("vx", vx), ("vy", vy), ("sxx", sxx), ("syy", syy), ("sxy", sxy)):
            if name in initial:
                arr[...] = initial[name]

    forced = ex is not None
    if forced:
        if n % 2:
            raise ValueError("centered point force requires an even cell count")
        ic = n // 2
        # The spectral solver's source is defined in the frequency domain as
        # exp(-eps^2 k^2), whose spatial counterpart is a Gaussian of
        # standard deviation sqrt(2)*eps; default to that width so both
        # solvers load the identical mollified force.
        width = math.sqrt(2.0) * ex.eps if source_width is None else source_width
        if width > 0:
            # Gaussian stamp on the vy lattice, unit discrete mass
            reach = max(1, int(math.ceil(4.0 * width / h)))
            ixs = np.arange(ic - reach, ic + reach + 1)
            jxs = np.arange(ic - reach - 1, ic + reach + 1)
            gx = grid_x = -domain / 2.0 + ixs * h
            gy = -domain / 2.0 + (jxs + 0.5) * h
            stamp = np.exp(-(gx[:, None] ** 2 + gy[None, :] ** 2) / (2.0 * width**2))
            stamp /= stamp.sum() * h * h
            f_rows = ixs
            f_cols = jxs
            f_stamp = rho * stamp
        else:
            f_stamp = None
            f_scale = rho / (h * h) / 2.0  # split across the two straddling vy samples

    energies = [] if energy_trace else None
    if energy_trace:
        det = 4.0 * mu * (lam + mu)
        s11c, s12c, s22c = lam2mu / det, -lam / det, lam2mu / det
        inv_mu_c = 1.0 / mu_c

    n_steps = n_out * sub
    out_ux = np.zeros((n_out, len(idx)))
    out_uy = np.zeros((n_out, len(idx)))

    for m in range(n_steps):
        t_mid = m * dti  # velocity update midpoint
        dvx = _dx_node_to_half(sxx, h) + _dy_half_to_node(sxy, h)
        dvy = _dx_half_to_node(sxy, h) + _dy_node_to_half(syy, h)
        if energy_trace:
            vx_old = vx.copy()
            vy_old = vy.copy()
        vx += (dti / rho) * dvx
        vy += (dti / rho) * dvy
        if forced:
            hval = float(ex.h(t_mid))
            if f_stamp is not None:
                vy[f_rows[0] : f_rows[-1] + 1, f_cols[0] : f_cols[-1] + 1] += (
                    hval * (dti / rho)
                ) * f_stamp
            else:
                f = hval * f_scale * (dti / rho)
                vy[ic, ic - 1] += f
                vy[ic, ic] += f
        ux += dti * vx
        uy += dti * vy
        exx = _dx_half_to_node(vx, h)
        eyy = _dy_half_to_node(vy, h)
        exy = _dy_node_to_half(vx, h) + _dx_node_to_half(vy, h)
        sxx += dti * (lam2mu * exx + lam * eyy)
        syy += dti * (lam * exx + lam2mu * eyy)
        sxy += dti * mu_c * exy
        if energy_trace:
            kin = 0.5 * rho * (np.sum(vx_old * vx) + np.sum(vy_old * vy))
            pot = 0.5 * np.sum(
                s11c * sxx**2 + 2 * s12c * sxx * syy + s22c * syy**2
            ) + 0.5 * np.sum(inv_mu_c * sxy**2)
            energies.append((kin + pot) * h * h)
        if (m + 1) % sub == 0:
            k = (m + 1) // sub - 1
            for s, (ix, iy) in enumerate(idx):
                out_ux[k, s] = _READOUT_W @ ux[ix - 2 : ix + 2, iy]
                out_uy[k, s] = _READOUT_W @ uy[ix, iy - 2 : iy + 2]

    times = dt * np.arange(1, n_out + 1)
    records = [
        SignalRecord(sid, times, out_ux[:, s].copy(), out_uy[:, s].copy())
        for s, (sid, _, _) in enumerate(snapped.sensors)
    ]
    if energy_trace:
        return records, np.asarray(energies)
    return records
