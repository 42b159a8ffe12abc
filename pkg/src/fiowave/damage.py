"""Monte-Carlo hypothesis tests classifying specimens against a calibrated null.

The null hypothesis (undamaged material) is represented by a large sample of
stochastic spectral solves: random stiffness/Poisson fields drawn from the
calibrated hyperparameters, one feature vector per draw.  Features are the
amplitude and phase angle of the two lowest nonzero DFT bins of every active
sensor signal; the four x-direction signals that vanish by the radiation
pattern of the centered vertical force are masked, leaving 12 signals x 4
features = 48 features.

Phase angles live on a circle, so each phase feature is centered on the
circular mean of its null sample and compared inside the window (mean - 180,
mean + 180] degrees; with the forward DFT convention a later-arriving signal
maps to a smaller centered phase.  Three decision procedures cover the
damage modes:

    I   left-sided on phases  (late arrivals: soft material),
    II  right-sided on phases (early arrivals: stiff material),
    III two-sided on amplitudes (scattering loss: cracks).

Empirical p-values use add-one smoothing, per-sensor p-values average the
sensor's active features, and the overall p-value is the minimum over
sensors; the null is rejected when it falls below the significance level.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fio import (
    Excitation,
    QuadratureGrid,
    SensorArray,
    SignalRecord,
    StochasticMedium,
    solve_stochastic,
)
from .random_field import FieldSampler, GridSpec, RandomFieldSpec, derive_seed

__all__ = [
    "FeatureLayout",
    "FeatureVector",
    "NullSample",
    "TestReport",
    "DEFAULT_MASK",
    "extract_features",
    "build_null_sample",
    "p_value",
    "run_test",
    "sensitivity_sweep",
]

# x-direction signals that vanish for the centered vertical point force
DEFAULT_MASK = frozenset({(2, "x"), (4, "x"), (5, "x"), (7, "x")})

_BINS = (1, 2)
_KINDS = ("amp", "phase")


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered feature index: (sensor_id, direction, dft_bin, kind) per entry."""

    entries: tuple[tuple[int, str, int, str], ...]

    @classmethod
    def for_sensors(
        cls, sensors: SensorArray, mask: frozenset = DEFAULT_MASK
    ) -> "FeatureLayout":
        entries = []
        for sid in sensors.ids:
            for direction in ("x", "y"):
                if (sid, direction) in mask:
                    continue
                for b in _BINS:
                    for kind in _KINDS:
                        entries.append((sid, direction, b, kind))
        return cls(tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_signals(self) -> int:
        return len({(s, d) for s, d, _, _ in self.entries})

    def sensor_ids(self) -> list[int]:
        seen: list[int] = []
        for s, _, _, _ in self.entries:
            if s not in seen:
                seen.append(s)
        return seen

    def indices_of_kind(self, kind: str) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.entries) if e[3] == kind], dtype=int)

    def as_lists(self) -> list[list]:
        return [list(e) for e in self.entries]

    @classmethod
    def from_lists(cls, rows: Sequence[Sequence]) -> "FeatureLayout":
        return cls(tuple((int(s), str(d), int(b), str(k)) for s, d, b, k in rows))


@dataclass
class FeatureVector:
    """Feature values aligned with a layout; undefined phases are NaN."""

    layout: FeatureLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.layout),):
            raise ValueError("feature values do not match layout length")


def _bin_features(x: np.ndarray, b: int) -> tuple[float, float]:
    n = len(x)
    coef = np.exp(-2j * np.pi * b * np.arange(n) / n) @ x
    amp = 2.0 * abs(coef) / n
    phase = math.degrees(np.angle(coef)) if amp > 0 else float("nan")
    return amp, phase


def _wrap_centered(theta: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Map angles into [center - 180, center + 180) degrees."""
    return center + np.mod(theta - center + 180.0, 360.0) - 180.0


def extract_features(
    signals: Sequence[SignalRecord],
    layout: FeatureLayout,
    phase_centers: np.ndarray | None = None,
) -> FeatureVector:
    """Amplitude and phase features of the active signals.

    Amplitudes are 2|X_b|/n (the amplitude of a pure tone at bin b); when
    ``phase_centers`` is given (degrees per feature, NaN for amplitudes) the
    phases are mapped into the centered interval of the null sample.
    Zero signals have undefined phase, reported as NaN.
    """
    by_id = {r.sensor_id: r for r in signals}
    values = np.empty(len(layout))
    for i, (sid, direction, b, kind) in enumerate(layout.entries):
        rec = by_id.get(sid)
        if rec is None:
            raise ValueError(f"missing sensor {sid} in signal set")
        if len(rec.times) < 4:
            raise ValueError("signals too short for spectral features")
        x = rec.ux if direction == "x" else rec.uy
        amp, phase = _bin_features(x, b)
        values[i] = amp if kind == "amp" else phase
    if phase_centers is not None:
        centers = np.asarray(phase_centers, dtype=float)
        ph = ~np.isnan(centers)
        ok = ph & ~np.isnan(values)
        values[ok] = _wrap_centered(values[ok], centers[ok])
    return FeatureVector(layout, values)


@dataclass
class NullSample:
    """Feature distribution of the undamaged model.

    ``features`` holds raw per-draw values (N x F); phase columns are also
    kept centered on their circular means and pre-sorted for p-value lookups.
    """

    layout: FeatureLayout
    features: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[1] != len(self.layout):
            raise ValueError("feature matrix does not match layout")
        self.phase_centers = np.full(len(self.layout), np.nan)
        centered = self.features.copy()
        for i, (_, _, _, kind) in enumerate(self.layout.entries):
            if kind == "phase":
                ang = np.radians(self.features[:, i])
                mean = np.angle(np.exp(1j * ang).mean())
                c = math.degrees(mean)
                self.phase_centers[i] = c
                centered[:, i] = _wrap_centered(self.features[:, i], c)
        self.centered = centered
        self.sorted = np.sort(centered, axis=0)

    @property
    def n_mc(self) -> int:
        return self.features.shape[0]

    def save(self, feature_path, manifest_path) -> None:
        np.save(feature_path, self.features)
        doc = dict(self.manifest)
        doc["layout"] = self.layout.as_lists()
        doc["n_mc"] = self.n_mc
        with open(manifest_path, "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load(cls, feature_path, manifest_path) -> "NullSample":
        features = np.load(feature_path)
        with open(manifest_path) as fh:
            doc = json.load(fh)
        layout = FeatureLayout.from_lists(doc.pop("layout"))
        doc.pop("n_mc", None)
        return cls(layout, features, doc)


def build_null_sample(
    e_spec: RandomFieldSpec,
    nu_spec: RandomFieldSpec,
    rho: float,
    ex: Excitation,
    quad: QuadratureGrid,
    sensors: SensorArray,
    n_mc: int = 10000,
    root_seed: int = 0,
    field_grid_n: int = 64,
    layout: FeatureLayout | None = None,
) -> NullSample:
    """Monte-Carlo feature sample of the undamaged stochastic model.

    Each draw samples fresh E/nu fields (child seeds derive_seed(root, i, 0)
    and (root, i, 1)), solves the stochastic model at the sensors and extracts
    one feature vector.  Deterministic in ``root_seed`` regardless of batching.
    """
    if n_mc < 100:
        raise ValueError("null sample needs at least 100 draws")
    layout = layout or FeatureLayout.for_sensors(sensors)
    grid = GridSpec.centered(field_grid_n, quad.domain)
    sampler_e = FieldSampler(e_spec, grid, "GPa")
    sampler_nu = FieldSampler(nu_spec, grid)
    t0 = time.perf_counter()
    rows = np.empty((n_mc, len(layout)))
    chunk = 256
    for lo in range(0, n_mc, chunk):
        hi = min(lo + chunk, n_mc)
        e_fields = sampler_e.sample_many([derive_seed(root_seed, i, 0) for i in range(lo, hi)])
        nu_fields = sampler_nu.sample_many([derive_seed(root_seed, i, 1) for i in range(lo, hi)])
        for j in range(hi - lo):
            medium = StochasticMedium(e_fields[j], nu_fields[j], rho)
            try:
                recs = solve_stochastic(medium, ex, quad, sensors)
            except Exception as err:
                raise RuntimeError(f"null draw {lo + j} failed: {err}") from err
            rows[lo + j] = extract_features(recs, layout).values
    manifest = {
        "root_seed": root_seed,
        "rho": rho,
        "field_grid_n": field_grid_n,
        "e_spec": {"mean": e_spec.mean, "sigma": e_spec.sigma, "corr_length": e_spec.corr_length},
        "nu_spec": {
            "mean": nu_spec.mean,
            "sigma": nu_spec.sigma,
            "corr_length": nu_spec.corr_length,
        },
        "build_seconds": round(time.perf_counter() - t0, 3),
    }
    return NullSample(layout, rows, manifest)


def p_value(x: float, sorted_null: np.ndarray, side: str) -> float:
    """Empirical p-value with add-one smoothing against a sorted null array.

    left:  (#{null <= x} + 1) / (N + 1)
    right: (#{null >= x} + 1) / (N + 1)
    two:   min(1, 2 * min(left, right))
    """
    n = len(sorted_null)
    if n == 0:
        raise ValueError("empty null sample")
    if math.isnan(x):
        return 1.0
    n_le = int(np.searchsorted(sorted_null, x, side="right"))
    n_ge = n - int(np.searchsorted(sorted_null, x, side="left"))
    left = (n_le + 1) / (n + 1)
    right = (n_ge + 1) / (n + 1)
    if side == "left":
        return left
    if side == "right":
        return right
    if side == "two":
        return min(1.0, 2.0 * min(left, right))
    raise ValueError(f"unknown sidedness {side!r}")


_TEST_SPEC = {
    "I": ("phase", "left"),
    "II": ("phase", "right"),
    "III": ("amp", "two"),
}


@dataclass
class TestReport:
    kind: str
    feature_p: dict[int, float]
    sensor_p: dict[int, float]
    overall: float
    decisions: dict[float, bool]
    flagged: tuple[int, ...] = ()

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "overall_p": self.overall,
            "sensor_p": {str(k): v for k, v in self.sensor_p.items()},
            "feature_p": {str(k): v for k, v in self.feature_p.items()},
            "decisions": {f"{a:g}": bool(r) for a, r in self.decisions.items()},
            "flagged_features": list(self.flagged),
        }


def run_test(
    kind: str,
    measured: FeatureVector,
    null: NullSample,
    alphas: Sequence[float] = (0.05, 0.01),
) -> TestReport:
    """One decision procedure against the null sample.

    Tests I/II evaluate one-sided p-values of the centered phase features,
    test III two-sided p-values of the amplitudes.  Per-sensor p is the mean
    over that sensor's features of the tested kind, the overall p the minimum
    over sensors; rejection means overall < alpha.  Features with undefined
    (NaN) measured phase get p = 1 and are flagged.
    """
    if kind not in _TEST_SPEC:
        raise ValueError(f"unknown test kind {kind!r}")
    if measured.layout.entries != null.layout.entries:
        raise ValueError("measured feature layout does not match the null sample")
    feature_kind, side = _TEST_SPEC[kind]
    idx = measured.layout.indices_of_kind(feature_kind)
    values = measured.values.copy()
    if feature_kind == "phase":
        ok = ~np.isnan(values[idx])
        values[idx[ok]] = _wrap_centered(values[idx[ok]], null.phase_centers[idx[ok]])

    feature_p: dict[int, float] = {}
    flagged: list[int] = []
    for i in idx:
        x = values[i]
        if math.isnan(x):
            flagged.append(int(i))
        feature_p[int(i)] = p_value(x, null.sorted[:, i], side)

    sensor_p: dict[int, float] = {}
    for sid in measured.layout.sensor_ids():
        ps = [
            feature_p[int(i)]
            for i in idx
            if measured.layout.entries[i][0] == sid
        ]
        sensor_p[sid] = float(np.mean(ps))
    overall = min(sensor_p.values())
    decisions = {float(a): overall < a for a in alphas}
    return TestReport(kind, feature_p, sensor_p, overall, decisions, tuple(flagged))


def sensitivity_sweep(
    values: Sequence[float],
    repetitions: int,
    null: NullSample,
    make_specimen: Callable[[float, int], Sequence[SignalRecord]],
    alphas: Sequence[float] = (0.05, 0.01),
    kinds: Sequence[str] = ("I", "II", "III"),
) -> dict[tuple[str, float], list[int]]:
    """Rejection counts of undamaged specimens across a parameter sweep.

    ``make_specimen(value, rep)`` generates one reference specimen's sensor
    signals at the swept parameter value; every specimen is scored by all
    requested tests and significance levels against the fixed null sample.
    Returns {(kind, alpha): [count per value]}.
    """
    table: dict[tuple[str, float], list[int]] = {
        (k, float(a)): [0] * len(values) for k in kinds for a in alphas
    }
    for vi, val in enumerate(values):
        for rep in range(repetitions):
            recs = make_specimen(val, rep)
            fv = extract_features(recs, null.layout)
            for k in kinds:
                rep_report = run_test(k, fv, null, alphas)
                for a in alphas:
                    if rep_report.decisions[float(a)]:
                        table[(k, float(a))][vi] += 1
    return table
