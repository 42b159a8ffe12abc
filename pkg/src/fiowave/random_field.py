"""Homogeneous Gaussian random fields with exponential autocovariance.

Fields are sampled on regular 2D lattices by exact dense factorization of the
node covariance matrix

    C(r) = sigma^2 * exp(-r / L),

so the population covariance between any two nodes is exact up to the tiny
diagonal jitter added for numerical rank deficiency.  This is affordable up
to ~10^4 nodes, which covers the lattice resolutions the wave solvers need
(field values are only ever consumed at sensor locations or interpolated
onto solver grids).

Reproducibility contract: a (spec, grid) pair with a fixed seed produces a
bit-identical realization.  Independent draws derive child seeds from the
root seed through :func:`derive_seed` (root XOR index, passed through a
splitmix64 hash), so samples can be generated in any order or concurrently
without changing values.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RandomFieldSpec",
    "GridSpec",
    "FieldRealization",
    "FieldSampler",
    "CovarianceFactorizationError",
    "exp_autocov",
    "sample_field",
    "field_at",
    "derive_seed",
]

# Relative diagonal jitter: exponential kernels on dense grids are numerically
# rank deficient, a 1e-10*sigma^2 shift keeps Cholesky stable without
# measurably distorting the covariance.
_JITTER = 1e-10

_MASK64 = 0xFFFFFFFFFFFFFFFF


class CovarianceFactorizationError(RuntimeError):
    """Covariance matrix was numerically non-PSD despite jitter."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"covariance factorization failed; minimum eigenvalue {min_eigenvalue:.3e}"
        )


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(root: int, *indices: int) -> int:
    """Child seed for sample ``indices`` under ``root``.

    The splitting rule is root-seed XOR index fed through splitmix64, chained
    over the index tuple.  Deterministic, order-independent across samples.
    """
    h = root & _MASK64
    for ix in indices:
        h = _splitmix64(h ^ (int(ix) & _MASK64))
    return h


@dataclass(frozen=True)
class RandomFieldSpec:
    """Hyperparameters of one scalar field: mean, sigma, correlation length, seed.

    Units of ``mean`` and ``sigma`` are those of the target quantity (GPa for a
    stiffness field, dimensionless for a Poisson-ratio field); ``corr_length``
    is in cm.
    """

    mean: float
    sigma: float
    corr_length: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ValueError("mean must be finite")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and >= 0")
        if not np.isfinite(self.corr_length) or self.corr_length <= 0:
            raise ValueError("corr_length must be finite and > 0")


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice: ``nx`` x ``ny`` nodes, spacings in cm, origin at (x0, y0)."""

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one node per axis")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("grid spacings must be positive")

    @staticmethod
    def centered(n: int, size: float) -> "GridSpec":
        """n x n nodes spanning [-size/2, size/2] inclusive."""
        if n < 2:
            raise ValueError("centered grid needs n >= 2")
        d = size / (n - 1)
        return GridSpec(n, n, d, d, -size / 2.0, -size / 2.0)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (
            self.x0,
            self.x0 + self.dx * (self.nx - 1),
            self.y0,
            self.y0 + self.dy * (self.ny - 1),
        )


@dataclass
class FieldRealization:
    """One gridded sample; ``values[ix, iy]`` belongs to node (x0+ix*dx, y0+iy*dy)."""

    grid: GridSpec
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must all be finite")

    # -- serialization -----------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_cm", "y_cm", "value"])
            xs, ys = self.grid.xs, self.grid.ys
            for ix in range(self.grid.nx):
                for iy in range(self.grid.ny):
                    writer.writerow([repr(xs[ix]), repr(ys[iy]), repr(self.values[ix, iy])])

    _MAGIC = b"FWGRID1\x00"

    def to_binary(self, path) -> None:
        g = self.grid
        units = self.units.encode()[:16].ljust(16, b"\x00")
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<qqdddd", g.nx, g.ny, g.dx, g.dy, g.x0, g.y0))
            fh.write(units)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "FieldRealization":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != cls._MAGIC:
                raise ValueError(f"not a field grid file (magic {magic!r})")
            nx, ny, dx, dy, x0, y0 = struct.unpack("<qqdddd", fh.read(48))
            units = fh.read(16).rstrip(b"\x00").decode()
            values = np.frombuffer(fh.read(nx * ny * 8), dtype="<f8").reshape(nx, ny)
        return cls(GridSpec(nx, ny, dx, dy, x0, y0), values.copy(), units)


def exp_autocov(r, sigma: float, L: float):
    """Isotropic exponential autocovariance sigma^2 * exp(-r/L).

    ``r`` may be a scalar or array of non-negative distances in cm.
    """
    r = np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(r)) and np.isfinite(sigma) and np.isfinite(L)):
        raise ValueError("exp_autocov arguments must be finite")
    if np.any(r < 0):
        raise ValueError("distance must be >= 0")
    if L <= 0:
        raise ValueError("correlation length must be > 0")
    out = (sigma * sigma) * np.exp(-r / L)
    return float(out) if out.ndim == 0 else out


# Cholesky factors of the unit-variance correlation matrix, keyed by
# (corr_length, grid).  The covariance factor is sigma times the cached one,
# so a single entry serves every sigma at that length.  Factors of dense
# grids are large (a 64x64 grid costs ~130 MB), hence the small capacity.
_FACTOR_CACHE: dict[tuple[float, GridSpec], np.ndarray] = {}
_FACTOR_CACHE_CAP = 2


def _correlation_factor(corr_length: float, grid: GridSpec) -> np.ndarray:
    key = (corr_length, grid)
    cached = _FACTOR_CACHE.get(key)
    if cached is not None:
        return cached
    xs, ys = grid.xs, grid.ys
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    corr = np.exp(-dist / corr_length)
    corr[np.diag_indices_from(corr)] += _JITTER
    try:
        factor = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(corr).min())
        raise CovarianceFactorizationError(min_eig) from None
    while len(_FACTOR_CACHE) >= _FACTOR_CACHE_CAP:
        _FACTOR_CACHE.pop(next(iter(_FACTOR_CACHE)))
    _FACTOR_CACHE[key] = factor
    return factor


class FieldSampler:
    """Reusable sampler: factorizes the node covariance once, then draws are
    cheap matrix-vector products.

    ``draw(i)`` uses the child seed ``derive_seed(spec.seed, i)`` so draws are
    independent and reproducible regardless of evaluation order.
    """

    def __init__(self, spec: RandomFieldSpec, grid: GridSpec, units: str = ""):
        self.spec = spec
        self.grid = grid
        self.units = units
        self._n = grid.nx * grid.ny
        self._chol = None
        if spec.sigma > 0:
            self._chol = spec.sigma * _correlation_factor(spec.corr_length, grid)

    def draw(self, index: int = 0) -> FieldRealization:
        return self._sample(derive_seed(self.spec.seed, index))

    def sample_with_seed(self, seed: int) -> FieldRealization:
        return self._sample(seed)

    def _sample(self, seed: int) -> FieldRealization:
        if self._chol is None:
            values = np.full((self.grid.nx, self.grid.ny), self.spec.mean)
        else:
            rng = np.random.default_rng(seed)
            z = rng.standard_normal(self._n)
            values = self.spec.mean + (self._chol @ z).reshape(self.grid.nx, self.grid.ny)
        return FieldRealization(self.grid, values, self.units)

    def sample_many(self, seeds) -> list[FieldRealization]:
        """Realizations for explicit seeds, batched through one matrix product.

        Values are independent of the batch composition: column j depends only
        on seeds[j], and the internal blocking is fixed, so prefixes of a
        longer seed list reproduce the shorter run.
        """
        seeds = list(seeds)
        if self._chol is None:
            return [self._sample(s) for s in seeds]
        out: list[FieldRealization] = []
        block = 256
        for lo in range(0, len(seeds), block):
            batch = seeds[lo : lo + block]
            z = np.column_stack(
                [np.random.default_rng(s).standard_normal(self._n) for s in batch]
            )
            vals = self.spec.mean + self._chol @ z
            for j in range(len(batch)):
                out.append(
                    FieldRealization(
                        self.grid,
                        vals[:, j].reshape(self.grid.nx, self.grid.ny).copy(),
                        self.units,
                    )
                )
        return out


def sample_field(spec: RandomFieldSpec, grid: GridSpec, units: str = "") -> FieldRealization:
    """One realization with population covariance exp_autocov(|xi-xj|, sigma, L).

    Deterministic in ``spec.seed``.  With sigma = 0 the field degenerates to
    the constant mean and no factorization is performed.
    """
    return FieldSampler(spec, grid, units).sample_with_seed(spec.seed)


def field_at(fr: FieldRealization, x, y):
    """Bilinear interpolation of node values; exact at the nodes.

    Raises ``ValueError`` for query points outside the grid bounding box.
    """
    g = fr.grid
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xmin, xmax, ymin, ymax = g.bbox
    tol_x = 1e-9 * max(abs(xmin), abs(xmax), g.dx)
    tol_y = 1e-9 * max(abs(ymin), abs(ymax), g.dy)
    if np.any(x < xmin - tol_x) or np.any(x > xmax + tol_x):
        raise ValueError(f"x outside grid bounding box [{xmin}, {xmax}]")
    if np.any(y < ymin - tol_y) or np.any(y > ymax + tol_y):
        raise ValueError(f"y outside grid bounding box [{ymin}, {ymax}]")

    fx = np.clip((x - g.x0) / g.dx, 0.0, g.nx - 1.0)
    fy = np.clip((y - g.y0) / g.dy, 0.0, g.ny - 1.0)
    ix = np.minimum(fx.astype(int), g.nx - 2) if g.nx > 1 else np.zeros_like(fx, dtype=int)
    iy = np.minimum(fy.astype(int), g.ny - 2) if g.ny > 1 else np.zeros_like(fy, dtype=int)
    tx = fx - ix
    ty = fy - iy
    v = fr.values
    if g.nx == 1:
        ix1 = ix
        tx = np.zeros_like(tx)
    else:
        ix1 = ix + 1
    if g.ny == 1:
        iy1 = iy
        ty = np.zeros_like(ty)
    else:
        iy1 = iy + 1
    out = (
        v[ix, iy] * (1 - tx) * (1 - ty)
        + v[ix1, iy] * tx * (1 - ty)
        + v[ix, iy1] * (1 - tx) * ty
        + v[ix1, iy1] * tx * ty
    )
    return float(out) if out.ndim == 0 else out
