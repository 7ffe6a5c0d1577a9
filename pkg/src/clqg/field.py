"""Multiscale cutoff-field synthesis on grids with exact variance bookkeeping.

A ladder of cutoff fields X_{eps_j}, eps_j = 2^{-j}, is built from independent
scale increments.  Translation-invariant families (MFF, Fourier) are sampled
by circulant embedding on a padded torus whose eigenvalues are folded samples
of the shell's spectral density; that keeps the embedding nonnegative up to
roundoff and makes the synthesized covariance exactly computable, so every
per-cell variance table matches the sampled field exactly rather than
nominally.  The Dirichlet GFF is sampled in the sine eigenbasis of its
rectangle.

Downstream formulas use sigma^2_j(x) (the true variance of the synthesized
field) everywhere the continuum writes ln(1/eps); this restores exact
martingale identities at finite resolution.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .dirichlet import Rect
from .errors import CacheError, DomainError, SynthesisError
from .kernels import FOURIER, GFF_DIRICHLET, MFF, KernelSpec

__all__ = [
    "GridSpec",
    "ScaleLadder",
    "FieldLadder",
    "rng_for",
    "sample_field_ladder",
    "sample_increment_batch",
    "field_at",
    "empirical_covariance",
    "write_field_cache",
    "read_field_cache",
    "append_measure_block",
    "read_measure_blocks",
]

_EIG_CLIP = 1e-10  # relative roundoff floor for embedding eigenvalues


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Counter-based generator for (seed, stream...); reproducible and splittable."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for s in stream:
        words.append(int(s) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=words[0], counter=words[1:] + [0] * (4 - len(words[1:]))))


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of cell centers x0 + (i + 1/2) dx, square cells."""

    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    dx: float = None  # defaults to 1/nx
    periodic: bool = False

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise DomainError("grid needs nx, ny >= 2")
        if self.dx is None:
            object.__setattr__(self, "dx", 1.0 / self.nx)
        if not self.dx > 0:
            raise DomainError("grid spacing must be positive")

    @property
    def window(self) -> Rect:
        return Rect(self.x0, self.y0, self.x0 + self.nx * self.dx, self.y0 + self.ny * self.dx)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    def centers(self):
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.dx
        return xs, ys

    def contains(self, p) -> np.ndarray:
        return self.window.contains(p)


@dataclass(frozen=True)
class ScaleLadder:
    """Dyadic cutoff scales eps_j = 2^-j, j = 0..J."""

    J: int

    def __post_init__(self):
        if self.J < 1:
            raise DomainError("ladder depth must be >= 1")

    @property
    def eps(self) -> np.ndarray:
        return 0.5 ** np.arange(self.J + 1)

    def __len__(self):
        return self.J + 1


@dataclass
class FieldLadder:
    """Grid samples of X_{eps_j} with per-scale variance tables.

    ``fields[j]`` and ``variances[j]`` are (ny, nx) arrays (row = y).  The
    variance tables are those of the synthesized field, exact by construction.
    Immutable after construction; safe to share across threads.
    """

    spec: KernelSpec
    grid: GridSpec
    ladder: ScaleLadder
    seed: int
    fields: list = dc_field(default_factory=list)
    variances: list = dc_field(default_factory=list)

    def freeze(self):
        for a in self.fields:
            a.flags.writeable = False
        for a in self.variances:
            if a.flags.owndata:
                a.flags.writeable = False
        return self

    @property
    def J(self) -> int:
        return self.ladder.J

    def variance_scalar(self, j: int) -> float:
        """Spatial mean of sigma^2_j (exact value for translation-invariant specs)."""
        return float(np.mean(self.variances[j]))

    def barrier_running_max(self, j: int) -> np.ndarray:
        """Per-cell max over scales i <= j of X_i - 2 sigma^2_i."""
        out = self.fields[0] - 2.0 * self.variances[0]
        for i in range(1, j + 1):
            out = np.maximum(out, self.fields[i] - 2.0 * self.variances[i])
        return out


# ----------------------------------------------------------------------------
# translation-invariant shells: folded spectral eigenvalues on a padded torus


def _mff_shell_density(xi2, m, j):
    """Spectral density of the shell increment X_{j+1} - X_j for the MFF."""
    return 2.0 * np.pi * (1.0 / (xi2 + m * m * 4.0**j) - 1.0 / (xi2 + m * m * 4.0 ** (j + 1)))


def _fourier_shell_density(xi2, profile, j):
    """Fourier white-noise shell: the profile restricted to its annulus."""
    lo2, hi2 = 4.0**j, 4.0 ** (j + 1)
    xi = np.sqrt(xi2)
    out = 2.0 * np.pi * profile(np.maximum(xi, 1e-300))
    out[(xi2 < lo2) | (xi2 >= hi2)] = 0.0
    return out


def _mff_wrap_extra(m, j, torus, diam):
    """Worst in-window covariance contamination from torus images."""
    from scipy import special

    tot = 0.0
    for kx in range(-3, 4):
        for ky in range(-3, 4):
            if kx == 0 and ky == 0:
                continue
            r = max(np.hypot(kx * torus, ky * torus) - diam, 1e-12)
            a = m * r
            tot += special.k0(min(a * 2.0**j, 700.0)) - special.k0(min(a * 2.0 ** (j + 1), 700.0))
    return tot


def _shell_pad(spec: KernelSpec, grid: GridSpec, j: int, wrap_tol: float) -> int:
    """Padding factor for shell j: smallest power of two with acceptable wrap."""
    if grid.periodic:
        return 1
    if spec.family == FOURIER:
        return 2  # sharp annuli ring in space; wrap is documented, not removable
    L = max(grid.nx, grid.ny) * grid.dx
    diam = np.hypot(grid.nx, grid.ny) * grid.dx
    pad = 2
    while pad < 16 and _mff_wrap_extra(spec.mass, j, pad * L, diam) > wrap_tol:
        pad *= 2
    return pad


def _spec_key(spec: KernelSpec):
    if spec.family == MFF:
        return (MFF, spec.mass)
    if spec.family == FOURIER:
        return (FOURIER, spec.mass, spec.fourier_profile.u, spec.fourier_profile.phi)
    return (GFF_DIRICHLET, spec.domain.x0, spec.domain.y0, spec.domain.x1, spec.domain.y1)


@lru_cache(maxsize=8)
def _shell_tables(spec_key, nx, ny, dx, periodic, J, wrap_tol):
    """Per-shell (sqrt eigenvalues, pad, shell variance); cached per config."""
    family = spec_key[0]
    spec = _spec_from_key(spec_key)
    grid = GridSpec(nx=nx, ny=ny, dx=dx, periodic=periodic)
    tables = []
    for j in range(J):
        pad = _shell_pad(spec, grid, j, wrap_tol)
        n_embed = pad * max(nx, ny)
        for attempt in range(3):
            N = n_embed
            Lt = N * dx
            xi = 2.0 * np.pi * sfft.fftfreq(N, d=1.0 / N) / Lt
            lam = np.zeros((N, N))
            fold = 2.0 * np.pi * N / Lt
            if family == MFF:
                for fx in (-2, -1, 0, 1, 2):
                    for fy in (-2, -1, 0, 1, 2):
                        xx = xi[None, :] + fx * fold
                        yy = xi[:, None] + fy * fold
                        lam += _mff_shell_density(xx * xx + yy * yy, spec.mass, j)
            else:
                # sharp annuli: average the density over each spectral cell so
                # coarse shells keep their variance on a sparse lattice
                dxi = 2.0 * np.pi / Lt
                for ox in (-dxi / 3.0, 0.0, dxi / 3.0):
                    for oy in (-dxi / 3.0, 0.0, dxi / 3.0):
                        xx = xi[None, :] + ox
                        yy = xi[:, None] + oy
                        lam += _fourier_shell_density(xx * xx + yy * yy, spec.fourier_profile, j) / 9.0
            # circulant eigenvalues Lambda_k = N^2 g(xi_k) / Lt^2 (Riemann weight
            # of the spectral integral; folding keeps them >= 0 up to roundoff)
            lam *= (N * N) / Lt**2
            floor = -_EIG_CLIP * lam.max()
            if lam.min() >= floor:
                lam = np.clip(lam, 0.0, None)
                break
            n_embed *= 2
        else:
            raise SynthesisError(
                f"non-positive-definite embedding for scale increment j={j} "
                f"after padding escalation"
            )
        shell_var = float(lam.sum()) / (lam.shape[0] * lam.shape[1])
        tables.append((np.sqrt(lam), n_embed // max(nx, ny), shell_var))
    return tuple(tables)


def _spec_from_key(key):
    if key[0] == MFF:
        return KernelSpec(family=MFF, mass=key[1])
    if key[0] == FOURIER:
        from .kernels import FourierProfile

        return KernelSpec(family=FOURIER, mass=key[1], fourier_profile=FourierProfile(u=key[2], phi=key[3]))
    return KernelSpec(family=GFF_DIRICHLET, domain=Rect(key[1], key[2], key[3], key[4]))


def _sample_shells_stationary(spec, grid, J, rng, wrap_tol, workers=1):
    """Draw the J independent shell increments; returns list of (ny, nx) arrays."""
    tables = _shell_tables(_spec_key(spec), grid.nx, grid.ny, grid.dx, grid.periodic, J, wrap_tol)
    out = []
    for sqrt_lam, pad, _ in tables:
        N = sqrt_lam.shape[0]
        z = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        f = sfft.ifft2(sqrt_lam * z, workers=workers).real * N
        out.append(np.ascontiguousarray(f[: grid.ny, : grid.nx]))
    return out


# ----------------------------------------------------------------------------
# Dirichlet GFF shells: sine eigenbasis on the domain rectangle


@lru_cache(maxsize=8)
def _gff_tables(spec_key, nx, ny, dx, x0, y0, J):
    """Sine-basis evaluation matrices and per-shell modal variances."""
    rect = Rect(spec_key[1], spec_key[2], spec_key[3], spec_key[4])
    a, b = rect.width, rect.height
    M = max(nx, ny) - 1
    n = np.arange(1, M + 1)
    xs = x0 + (np.arange(nx) + 0.5) * dx - rect.x0
    ys = y0 + (np.arange(ny) + 0.5) * dx - rect.y0
    Sx = np.sqrt(2.0 / a) * np.sin(np.outer(n, np.pi * xs / a))  # (M, nx)
    Sy = np.sqrt(2.0 / b) * np.sin(np.outer(n, np.pi * ys / b))  # (M, ny)
    lam = ((np.pi * n / a) ** 2)[:, None] + ((np.pi * n / b) ** 2)[None, :]
    eps = 0.5 ** np.arange(J + 1)
    V = []
    for j in range(J):
        v = (2.0 * np.pi / lam) * (np.exp(-lam * eps[j + 1] ** 2 / 2.0) - np.exp(-lam * eps[j] ** 2 / 2.0))
        V.append(v)
    return Sx, Sy, tuple(V)


def _sample_shells_gff(spec, grid, J, rng):
    rect = spec.domain
    if not (rect.contains([grid.x0, grid.y0]) and rect.contains([grid.window.x1, grid.window.y1])):
        raise DomainError("grid window must lie inside the GFF domain")
    if grid.periodic:
        raise DomainError("periodic grids are incompatible with a Dirichlet GFF")
    Sx, Sy, V = _gff_tables(_spec_key(spec), grid.nx, grid.ny, grid.dx, grid.x0, grid.y0, J)
    fields, variances = [], []
    for j in range(J):
        A = np.sqrt(V[j]) * rng.standard_normal(V[j].shape)
        fields.append((Sy.T @ A.T @ Sx))  # (ny, nx)
        variances.append((Sy.T**2) @ V[j].T @ (Sx**2))
    return fields, variances


def sample_field_ladder(
    spec: KernelSpec,
    grid: GridSpec,
    ladder: ScaleLadder,
    seed: int,
    wrap_tol: float = 5e-3,
    workers: int = 1,
) -> FieldLadder:
    """Sample the full cutoff ladder; same seed gives bit-identical output.

    Scale increments are mutually independent; X_0 is the zero grid (the
    cutoff integral over [1, 1] is empty).  Variance tables are exact for the
    synthesized field.
    """
    rng = rng_for(seed, 0xF1E1D)
    shape = (grid.ny, grid.nx)
    fl = FieldLadder(spec=spec, grid=grid, ladder=ladder, seed=seed)
    fl.fields.append(np.zeros(shape))
    fl.variances.append(np.zeros(shape))
    if spec.family == GFF_DIRICHLET:
        incs, inc_vars = _sample_shells_gff(spec, grid, ladder.J, rng)
        for j in range(ladder.J):
            fl.fields.append(fl.fields[-1] + incs[j])
            fl.variances.append(fl.variances[-1] + inc_vars[j])
    else:
        incs = _sample_shells_stationary(spec, grid, ladder.J, rng, wrap_tol, workers)
        tables = _shell_tables(_spec_key(spec), grid.nx, grid.ny, grid.dx, grid.periodic, ladder.J, wrap_tol)
        var = 0.0
        for j in range(ladder.J):
            fl.fields.append(fl.fields[-1] + incs[j])
            var += tables[j][2]
            fl.variances.append(np.broadcast_to(np.float64(var), shape))
    return fl.freeze()


def sample_increment_batch(spec, grid, ladder, seed, replicas, wrap_tol=5e-3, workers=1):
    """Yield (replica_index, FieldLadder) in replica order.

    Each replica uses the stream derived from (seed, replica); aggregation in
    yielded order is bit-reproducible regardless of the worker count.
    """
    for r in range(replicas):
        yield r, sample_field_ladder(spec, grid, ladder, _replica_seed(seed, r), wrap_tol, workers)


def _replica_seed(seed: int, r: int) -> int:
    # distinct 64-bit keys per replica; Philox keys need not be related
    return (int(seed) * 0x9E3779B97F4A7C15 + 0x2545F4914F6CDD1D * (r + 1)) & 0xFFFFFFFFFFFFFFFF


# ----------------------------------------------------------------------------
# point evaluation and replica statistics


def field_at(fl: FieldLadder, j: int, p) -> float:
    """Bilinear interpolation of X_j at p; exact at cell centers."""
    vals = field_at_many(fl.fields[j], fl.grid, np.asarray(p, dtype=float)[None, :])
    return float(vals[0])


def field_at_many(grid_vals: np.ndarray, grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Vectorized bilinear interpolation on cell centers.

    On periodic grids coordinates wrap; otherwise points must lie inside the
    grid hull (edge cells extend as constants over their outer half-cell).
    """
    x = (pts[:, 0] - grid.x0) / grid.dx - 0.5
    y = (pts[:, 1] - grid.y0) / grid.dx - 0.5
    if grid.periodic:
        x = np.mod(x, grid.nx)
        y = np.mod(y, grid.ny)
        i0 = np.floor(x).astype(np.int64)
        j0 = np.floor(y).astype(np.int64)
        fx = x - i0
        fy = y - j0
        i1 = (i0 + 1) % grid.nx
        j1 = (j0 + 1) % grid.ny
        i0 %= grid.nx
        j0 %= grid.ny
    else:
        if np.any(x < -0.5) or np.any(x > grid.nx - 0.5) or np.any(y < -0.5) or np.any(y > grid.ny - 0.5):
            raise DomainError("point outside grid hull")
        x = np.clip(x, 0.0, grid.nx - 1.0)
        y = np.clip(y, 0.0, grid.ny - 1.0)
        i0 = np.minimum(np.floor(x).astype(np.int64), grid.nx - 2)
        j0 = np.minimum(np.floor(y).astype(np.int64), grid.ny - 2)
        fx = x - i0
        fy = y - j0
        i1 = i0 + 1
        j1 = j0 + 1
    v00 = grid_vals[j0, i0]
    v01 = grid_vals[j0, i1]
    v10 = grid_vals[j1, i0]
    v11 = grid_vals[j1, i1]
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


def bilinear_prepare(grid: GridSpec, pts: np.ndarray, clip_outside: bool = False):
    """Precompute bilinear stencils for many grids at the same points.

    With ``clip_outside`` points beyond the hull are clamped (callers zero
    their weights separately); otherwise they raise.
    """
    x = (pts[:, 0] - grid.x0) / grid.dx - 0.5
    y = (pts[:, 1] - grid.y0) / grid.dx - 0.5
    if grid.periodic:
        x = np.mod(x, grid.nx)
        y = np.mod(y, grid.ny)
        i0 = np.floor(x).astype(np.int64)
        j0 = np.floor(y).astype(np.int64)
        fx = x - i0
        fy = y - j0
        i1 = (i0 + 1) % grid.nx
        j1 = (j0 + 1) % grid.ny
        i0 %= grid.nx
        j0 %= grid.ny
    else:
        bad = (x < -0.5) | (x > grid.nx - 0.5) | (y < -0.5) | (y > grid.ny - 0.5)
        if np.any(bad) and not clip_outside:
            raise DomainError("point outside grid hull")
        x = np.clip(x, 0.0, grid.nx - 1.0)
        y = np.clip(y, 0.0, grid.ny - 1.0)
        i0 = np.minimum(np.floor(x).astype(np.int64), grid.nx - 2)
        j0 = np.minimum(np.floor(y).astype(np.int64), grid.ny - 2)
        fx = x - i0
        fy = y - j0
        i1 = i0 + 1
        j1 = j0 + 1
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    return (j0, i0, j1, i1, w00, w01, w10, w11)


def bilinear_apply(grid_vals: np.ndarray, prep) -> np.ndarray:
    j0, i0, j1, i1, w00, w01, w10, w11 = prep
    return (
        w00 * grid_vals[j0, i0]
        + w01 * grid_vals[j0, i1]
        + w10 * grid_vals[j1, i0]
        + w11 * grid_vals[j1, i1]
    )


def empirical_covariance(fields, j: int, x, y, grid: GridSpec) -> float:
    """Unbiased sample covariance of X_j(x), X_j(y) over a replica set."""
    if len(fields) < 2:
        raise DomainError("need at least 2 replicas")
    ax = np.array([field_at(f, j, x) for f in fields])
    ay = np.array([field_at(f, j, y) for f in fields])
    return float(np.cov(ax, ay, ddof=1)[0, 1])


# ----------------------------------------------------------------------------
# binary field cache: magic "CLQG", little-endian, row-major float64 grids


_MAGIC = b"CLQG"
_VERSION = 1


def write_field_cache(path, fl: FieldLadder):
    buf = io.BytesIO()
    buf.write(struct.pack("<II", _VERSION, fl.spec.kernel_id()))
    params = _param_block(fl.spec)
    buf.write(struct.pack("<I", len(params)))
    buf.write(struct.pack(f"<{len(params)}d", *params))
    buf.write(struct.pack("<Q", fl.seed & 0xFFFFFFFFFFFFFFFF))
    buf.write(struct.pack("<QQddd", fl.grid.nx, fl.grid.ny, fl.grid.x0, fl.grid.y0, fl.grid.dx))
    buf.write(struct.pack("<I", fl.ladder.J))
    buf.write(np.asarray(fl.ladder.eps, dtype="<f8").tobytes())
    for j in range(fl.ladder.J + 1):
        buf.write(np.ascontiguousarray(fl.fields[j], dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(fl.variances[j], dtype="<f8").tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def _param_block(spec: KernelSpec):
    if spec.family == MFF:
        return [spec.mass]
    if spec.family == GFF_DIRICHLET:
        return [spec.domain.x0, spec.domain.y0, spec.domain.x1, spec.domain.y1]
    return [spec.mass]


def read_field_cache(path) -> FieldLadder:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise CacheError(f"{path}: not a CLQG field cache")
    (plen,) = struct.unpack_from("<Q", raw, 4)
    if len(raw) < 12 + plen + 4:
        raise CacheError(f"{path}: truncated field cache")
    payload = raw[12 : 12 + plen]
    (crc,) = struct.unpack_from("<I", raw, 12 + plen)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CacheError(f"{path}: checksum mismatch")
    off = 0
    version, kid = struct.unpack_from("<II", payload, off)
    off += 8
    if version != _VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    (nparams,) = struct.unpack_from("<I", payload, off)
    off += 4
    params = struct.unpack_from(f"<{nparams}d", payload, off)
    off += 8 * nparams
    (seed,) = struct.unpack_from("<Q", payload, off)
    off += 8
    nx, ny, x0, y0, dx = struct.unpack_from("<QQddd", payload, off)
    off += 40
    (J,) = struct.unpack_from("<I", payload, off)
    off += 4
    off += 8 * (J + 1)  # the eps array is implied by J; stored for external readers
    spec = _spec_from_cache(kid, params)
    grid = GridSpec(nx=int(nx), ny=int(ny), x0=x0, y0=y0, dx=dx)
    fl = FieldLadder(spec=spec, grid=grid, ladder=ScaleLadder(J=int(J)), seed=int(seed))
    count = int(nx) * int(ny)
    for j in range(J + 1):
        f = np.frombuffer(payload, dtype="<f8", count=count, offset=off).reshape(int(ny), int(nx)).copy()
        off += 8 * count
        v = np.frombuffer(payload, dtype="<f8", count=count, offset=off).reshape(int(ny), int(nx)).copy()
        off += 8 * count
        fl.fields.append(f)
        fl.variances.append(v)
    return fl.freeze()


def _spec_from_cache(kid, params):
    if kid == 1:
        return KernelSpec(family=MFF, mass=params[0])
    if kid == 2:
        return KernelSpec(family=GFF_DIRICHLET, domain=Rect(*params))
    if kid == 3:
        return KernelSpec(family=FOURIER, mass=params[0])
    raise CacheError(f"unknown kernel id {kid}")


def append_measure_block(path, kind_id: int, j: int, beta: float, masses: np.ndarray):
    """Append a measure block (kind, scale, beta header + row-major masses)."""
    with open(path, "ab") as fh:
        fh.write(b"MEAS")
        fh.write(struct.pack("<IId", kind_id, j, beta))
        fh.write(struct.pack("<QQ", masses.shape[1], masses.shape[0]))
        fh.write(np.ascontiguousarray(masses, dtype="<f8").tobytes())


def read_measure_blocks(path):
    """Read any measure blocks appended after the field cache checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    blocks = []
    (plen,) = struct.unpack_from("<Q", raw, 4)
    off = raw.find(b"MEAS", 12 + plen)
    while off != -1:
        kind_id, j, beta = struct.unpack_from("<IId", raw, off + 4)
        nx, ny = struct.unpack_from("<QQ", raw, off + 20)
        count = int(nx) * int(ny)
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=off + 36).reshape(int(ny), int(nx)).copy()
        blocks.append({"kind_id": kind_id, "j": j, "beta": beta, "masses": data})
        off = raw.find(b"MEAS", off + 36 + 8 * count)
    return blocks
