"""Estimation of nominal elastic constants and their statistical hyperparameters.

Nominal values (E, nu) are fitted by derivative-free minimization of a
weighted L2 misfit between measured sensor signals and spectral-solver
predictions.  Repeating the fit per sensor and per Monte-Carlo specimen
yields per-sensor optima whose pooled spread estimates the stiffness and
Poisson-ratio standard deviations, and whose spatial covariogram over sensor
pairs estimates the correlation length.

Both raw hyperparameter estimators are biased at short correlation lengths
(the medium looks quasi-homogeneous to the sensors), so calibration curves
fitted as power laws over controlled numerical experiments provide the
correction: sigma uses the slope curve evaluated at the corrected length,
the length estimate inverts its own calibration curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fio import (
    Excitation,
    MaterialParams,
    QuadratureGrid,
    SensorArray,
    SignalRecord,
    solve_deterministic,
)

__all__ = [
    "FitWeights",
    "EstimationResult",
    "CalibrationCurve",
    "CorrLengthFit",
    "weighted_norm",
    "signal_weights",
    "nelder_mead",
    "make_fio_handle",
    "estimate_nominal",
    "pooled_means",
    "estimate_sigmas",
    "fit_power_curve",
    "sensor_pair_groups",
    "empirical_covariogram",
    "estimate_corr_length",
    "correct_bias",
]

# optimizer bounds; candidates outside get a graded penalty instead of a solve
_E_BOUNDS = (1.0, 500.0)
_NU_BOUNDS = (0.01, 0.49)

# near-zero signals (masked directions) would otherwise dominate an
# inverse-square weight; floor the per-direction maximum at 5% of the peak
_WEIGHT_FLOOR = 0.05


@dataclass(frozen=True)
class FitWeights:
    """Per-direction weights of the misfit norm."""

    w1: float
    w2: float

    def __post_init__(self):
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError("weights must be positive")


def signal_weights(records: Sequence[SignalRecord]) -> FitWeights:
    """Weights from the measured per-direction maxima.

    Uses the inverse squared maximum so both directions contribute with equal
    importance regardless of their raw amplitudes; the maxima are floored at
    5% of the overall peak so near-zero directions cannot blow up the norm.
    """
    m1 = max(float(np.abs(r.ux).max()) for r in records)
    m2 = max(float(np.abs(r.uy).max()) for r in records)
    m = max(m1, m2)
    if m == 0:
        raise ValueError("all-zero measured signals")
    floor = _WEIGHT_FLOOR * m
    return FitWeights(1.0 / max(m1, floor) ** 2, 1.0 / max(m2, floor) ** 2)


def weighted_norm(diff: Sequence[tuple[np.ndarray, np.ndarray]], w: FitWeights, dt: float) -> float:
    """Sum over sensors of sqrt(sum_d w_d * int f_d^2 dt), rectangular rule.

    ``diff`` holds per-sensor (fx, fy) arrays on a uniform grid of step dt.
    """
    total = 0.0
    for fx, fy in diff:
        fx = np.asarray(fx, dtype=float)
        fy = np.asarray(fy, dtype=float)
        if fx.shape != fy.shape:
            raise ValueError("mismatched component lengths")
        total += math.sqrt(dt * (w.w1 * float(fx @ fx) + w.w2 * float(fy @ fy)))
    return total


@dataclass
class EstimationResult:
    e_opt: float
    nu_opt: float
    objective: float
    iterations: int
    n_evals: int
    converged: bool
    sensor_id: int | None = None

    def __post_init__(self):
        if self.objective < 0:
            raise ValueError("objective must be >= 0")


def nelder_mead(
    fn: Callable[[float, float], float],
    init: tuple[float, float],
    steps: tuple[float, float] = (5.0, 0.02),
    xtol: tuple[float, float] = (0.01, 1e-4),
    frac_ftol: float = 1e-6,
    max_iter: int = 200,
):
    """Two-parameter Nelder-Mead with standard coefficients.

    Reflection 1, expansion 2, contraction 0.5, shrink 0.5.  Stops when every
    vertex is within ``xtol`` of the best per coordinate, or when the
    objective spread drops below ``frac_ftol`` times the initial value.
    Returns (best_point, best_value, iterations, n_evals, converged).
    """
    pts = [np.array(init, dtype=float)]
    pts.append(pts[0] + np.array([steps[0], 0.0]))
    pts.append(pts[0] + np.array([0.0, steps[1]]))
    evals = [fn(*p) for p in pts]
    n_evals = 3
    f_scale = max(evals[0], 1e-300)

    order = np.argsort(evals)
    pts = [pts[i] for i in order]
    evals = [evals[i] for i in order]

    converged = False
    it = 0
    while it < max_iter:
        it += 1
        spread = evals[2] - evals[0]
        diam = np.max(np.abs(np.array(pts) - pts[0]), axis=0)
        if (diam[0] < xtol[0] and diam[1] < xtol[1]) or spread < frac_ftol * f_scale:
            converged = True
            break
        centroid = (pts[0] + pts[1]) / 2.0
        xr = centroid + (centroid - pts[2])
        fr = fn(*xr)
        n_evals += 1
        if fr < evals[0]:
            xe = centroid + 2.0 * (centroid - pts[2])
            fe = fn(*xe)
            n_evals += 1
            if fe < fr:
                pts[2], evals[2] = xe, fe
            else:
                pts[2], evals[2] = xr, fr
        elif fr < evals[1]:
            pts[2], evals[2] = xr, fr
        else:
            if fr < evals[2]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (pts[2] - centroid)
            fc = fn(*xc)
            n_evals += 1
            if fc < min(fr, evals[2]):
                pts[2], evals[2] = xc, fc
            else:
                for i in (1, 2):
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                    evals[i] = fn(*pts[i])
                n_evals += 2
        order = np.argsort(evals)
        pts = [pts[i] for i in order]
        evals = [evals[i] for i in order]

    return (float(pts[0][0]), float(pts[0][1])), float(evals[0]), it, n_evals, converged


def make_fio_handle(
    ex: Excitation, quad: QuadratureGrid, sensors: SensorArray, rho: float = 2.70
) -> Callable[[float, float], list[SignalRecord]]:
    """Solver handle (E, nu) -> sensor signals for the fitting loop."""

    def handle(e: float, nu: float) -> list[SignalRecord]:
        return solve_deterministic(MaterialParams(e, nu, rho), ex, quad, sensors)

    return handle


def estimate_nominal(
    measured: Sequence[SignalRecord],
    solver: Callable[[float, float], Sequence[SignalRecord]],
    init: tuple[float, float] = (50.0, 0.3),
    weights: FitWeights | None = None,
    max_iter: int = 200,
    sensor_id: int | None = None,
) -> EstimationResult:
    """Fit (E, nu) so the solver output matches the measured signals.

    ``solver`` must produce records for exactly the measured sensors on the
    same time grid.  Candidates outside the physical box E in (1, 500) GPa,
    nu in (0.01, 0.49) are rejected by a graded penalty.  A fit that exhausts
    ``max_iter`` is returned with ``converged=False``.
    """
    measured = list(measured)
    if not measured:
        raise ValueError("no measured signals")
    dt = float(measured[0].times[1] - measured[0].times[0]) if len(measured[0].times) > 1 else float(
        measured[0].times[0]
    )
    if weights is None:
        weights = signal_weights(measured)
    by_id = {r.sensor_id: r for r in measured}

    def objective(e: float, nu: float) -> float:
        violation = 0.0
        if not (_E_BOUNDS[0] < e < _E_BOUNDS[1]):
            violation += abs(e - np.clip(e, *_E_BOUNDS)) + 1.0
        if not (_NU_BOUNDS[0] < nu < _NU_BOUNDS[1]):
            violation += abs(nu - np.clip(nu, *_NU_BOUNDS)) + 1.0
        if violation:
            return 1e9 * violation
        predicted = solver(e, nu)
        diff = []
        for p in predicted:
            mrec = by_id.get(p.sensor_id)
            if mrec is None:
                raise ValueError(f"solver produced unknown sensor {p.sensor_id}")
            diff.append((mrec.ux - p.ux, mrec.uy - p.uy))
        return weighted_norm(diff, weights, dt)

    (e_opt, nu_opt), fval, iters, n_evals, converged = nelder_mead(
        objective, init, max_iter=max_iter
    )
    return EstimationResult(e_opt, nu_opt, fval, iters, n_evals, converged, sensor_id)


def pooled_means(results: Sequence[EstimationResult]) -> tuple[float, float]:
    """Arithmetic means of per-repetition optima."""
    if not results:
        raise ValueError("no results to pool")
    return (
        float(np.mean([r.e_opt for r in results])),
        float(np.mean([r.nu_opt for r in results])),
    )


def estimate_sigmas(
    e_optima: np.ndarray,
    nu_optima: np.ndarray,
    e_star: float,
    nu_star: float,
) -> tuple[float, float]:
    """Pooled standard deviations of the per-sensor optima.

    ``e_optima``/``nu_optima`` are (N, n) arrays over repetitions and sensors;
    the normalization is 1/(N*n - 1) around the pooled means.  The Poisson
    ratio spread is reported as-is (no bias correction is applied to it).
    """
    e = np.asarray(e_optima, dtype=float)
    nu = np.asarray(nu_optima, dtype=float)
    if e.size < 2 or nu.size < 2:
        raise ValueError("need at least two optima")
    var_e = np.sum((e - e_star) ** 2) / (e.size - 1)
    var_nu = np.sum((nu - nu_star) ** 2) / (nu.size - 1)
    return math.sqrt(var_e), math.sqrt(var_nu)


@dataclass
class CalibrationCurve:
    """Fitted power law y = c0 * L^c1 with its support points."""

    kind: str
    c0: float
    c1: float
    residual: float
    support: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in ("f", "g", "h"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if self.c0 <= 0:
            raise ValueError("power-law prefactor must be positive")

    def __call__(self, L) -> float | np.ndarray:
        return self.c0 * np.asarray(L, dtype=float) ** self.c1

    def invert(self, y: float) -> float:
        if abs(self.c1) < 1e-12:
            raise ValueError("curve with zero exponent is not invertible")
        if y <= 0:
            raise ValueError("can only invert positive values")
        return (y / self.c0) ** (1.0 / self.c1)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "c0": self.c0,
            "c1": self.c1,
            "residual": self.residual,
            "support": [list(p) for p in self.support],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationCurve":
        return cls(
            d["kind"],
            float(d["c0"]),
            float(d["c1"]),
            float(d["residual"]),
            tuple((float(a), float(b)) for a, b in d["support"]),
        )


def fit_power_curve(points: Sequence[tuple[float, float]], kind: str = "f") -> CalibrationCurve:
    """Least-squares power law through (L, y) pairs via log-log regression."""
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 2:
        raise ValueError("need at least two support points")
    if any(a <= 0 or b <= 0 for a, b in pts):
        raise ValueError("power-law fit requires positive data")
    lx = np.log([a for a, _ in pts])
    ly = np.log([b for _, b in pts])
    c1, lc0 = np.polyfit(lx, ly, 1)
    resid = ly - (lc0 + c1 * lx)
    return CalibrationCurve(
        kind,
        float(np.exp(lc0)),
        float(c1),
        float(np.sqrt(np.mean(resid**2))),
        tuple(pts),
    )


def sensor_pair_groups(
    sensors: SensorArray, decimals: int = 6
) -> list[tuple[float, list[tuple[int, int]]]]:
    """Sensor pairs grouped by identical Euclidean distance, self-pairs first.

    Distances are rounded to ``decimals`` before grouping; the result is
    sorted by distance, the r=0 group containing every (j, j) pair.
    """
    ids = sensors.ids
    pos = dict(zip(ids, sensors.positions()))
    groups: dict[float, list[tuple[int, int]]] = {0.0: [(j, j) for j in ids]}
    for a_i in range(len(ids)):
        for b_i in range(a_i + 1, len(ids)):
            a, b = ids[a_i], ids[b_i]
            r = round(math.dist(pos[a], pos[b]), decimals)
            groups.setdefault(r, []).append((a, b))
    return sorted(groups.items())


def empirical_covariogram(
    e_optima: np.ndarray,
    e_star: float,
    groups: Sequence[tuple[float, Sequence[tuple[int, int]]]],
    sensor_ids: Sequence[int],
) -> list[tuple[float, float]]:
    """Empirical covariance of per-sensor optima at each pair-group lag.

    C(r_l) = 1/(N*|P_l| - 1) * sum over repetitions and pairs of the centered
    products.  ``e_optima`` is (N, n) ordered like ``sensor_ids``.
    """
    e = np.asarray(e_optima, dtype=float)
    col = {sid: j for j, sid in enumerate(sensor_ids)}
    out = []
    for r, pairs in groups:
        if not pairs:
            raise ValueError(f"empty pair group at distance {r}")
        acc = 0.0
        for j1, j2 in pairs:
            if j1 not in col or j2 not in col:
                raise ValueError(f"unknown sensor id in pair ({j1}, {j2})")
            acc += float(np.sum((e[:, col[j1]] - e_star) * (e[:, col[j2]] - e_star)))
        out.append((float(r), acc / (e.shape[0] * len(pairs) - 1)))
    return out


@dataclass
class CorrLengthFit:
    L_opt: float
    objective: float
    degenerate: bool


def estimate_corr_length(
    covariogram: Sequence[tuple[float, float]],
    sigma_opt: float,
    bounds: tuple[float, float] = (0.01, 100.0),
) -> CorrLengthFit:
    """Correlation length minimizing the L1 misfit to sigma^2 exp(-r/L).

    Golden-section search on log L; flagged degenerate when the covariogram
    carries no signal (all lags ~ 0 or sigma_opt = 0).
    """
    rs = np.array([r for r, _ in covariogram])
    cs = np.array([c for _, c in covariogram])
    scale = sigma_opt**2
    if scale <= 0 or np.allclose(cs, 0.0, atol=1e-30):
        return CorrLengthFit(float("nan"), float(np.abs(cs).sum()), True)

    def obj(logL: float) -> float:
        return float(np.abs(cs - scale * np.exp(-rs / math.exp(logL))).sum())

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = obj(x1), obj(x2)
    while b - a > 1e-10:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = obj(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = obj(x2)
    logL = (a + b) / 2.0
    return CorrLengthFit(math.exp(logL), obj(logL), False)


def correct_bias(
    L_e0_opt: float,
    sigma_e0_opt: float,
    curve_f: CalibrationCurve,
    curve_g: CalibrationCurve,
    sigma_ref: float,
) -> tuple[float, float]:
    """Undo the estimator biases through the fitted calibration curves.

    L* inverts the length curve; sigma* divides by the slope curve evaluated
    at L*, where the slope is the sigma-curve normalized by the reference
    standard deviation it was generated with.
    """
    if L_e0_opt <= 0:
        raise ValueError("raw correlation-length estimate must be positive")
    if sigma_ref <= 0:
        raise ValueError("sigma_ref must be positive")
    L_star = curve_g.invert(L_e0_opt)
    sigma_star = sigma_e0_opt * sigma_ref / float(curve_f(L_star))
    return L_star, sigma_star
