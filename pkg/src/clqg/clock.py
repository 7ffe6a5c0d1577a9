"""Brownian paths and the derivative clock along them.

The raw clock integrates e^{2 X_j - 2 sigma^2_j} along a discretized Brownian
path (left-endpoint Riemann sum, matching the adapted nondecreasing
structure); the derivative clock integrates the barrier-truncated derivative
weight.  Both use field values bilinearly interpolated from the grid, and the
barrier indicator interpolates the per-cell running ladder maximum.

The truncated clock is nondecreasing and piecewise linear between knots, so
its monotone inverse (the quadratic variation of the time-changed motion) is
linear interpolation with exact knot values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import DomainError, HorizonExceededError, NumericError
from .field import FieldLadder, bilinear_apply, bilinear_prepare, rng_for

__all__ = [
    "SQRT_2_OVER_PI",
    "BrownianPath",
    "ClockPath",
    "simulate_bm",
    "clock_raw",
    "clock_derivative",
    "invert_clock",
    "clock_value_at",
    "seneta_heyde_clock_ratio",
    "path_max_statistic",
]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class BrownianPath:
    """Discretized planar Brownian path started at ``start``."""

    start: np.ndarray
    dt: float
    positions: np.ndarray  # (K+1, 2)
    seed: Optional[int] = None

    @property
    def K(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    def shifted(self, k: int) -> "BrownianPath":
        """The path restarted at knot k (for additivity / restart checks)."""
        return BrownianPath(
            start=self.positions[k].copy(), dt=self.dt, positions=self.positions[k:].copy(), seed=None
        )


def simulate_bm(x, T: float, dt: float, seed: int) -> BrownianPath:
    """Planar BM with per-coordinate increment variance dt; deterministic in seed."""
    if not (T > 0 and dt > 0):
        raise DomainError("simulate_bm needs T > 0 and dt > 0")
    K = int(math.ceil(T / dt))
    rng = rng_for(seed, 0xB20)
    inc = rng.standard_normal((K, 2)) * math.sqrt(dt)
    pos = np.empty((K + 1, 2))
    pos[0] = np.asarray(x, dtype=float)
    np.cumsum(inc, axis=0, out=inc)
    pos[1:] = pos[0] + inc
    return BrownianPath(start=pos[0].copy(), dt=dt, positions=pos, seed=seed)


@dataclass
class ClockPath:
    """Cumulative clock values along one Brownian path at one ladder scale.

    ``F_der`` is the barrier-truncated derivative clock (nondecreasing),
    ``F_der_tilde`` its variant without the +beta term (still truncated), and
    ``F_der_untruncated`` the signed variant with neither indicator nor beta.
    """

    path: BrownianPath
    j: int
    beta: Optional[float]
    F_raw: np.ndarray
    F_der: Optional[np.ndarray] = None
    F_der_tilde: Optional[np.ndarray] = None
    F_der_untruncated: Optional[np.ndarray] = None
    barrier_ok: Optional[np.ndarray] = None
    exited: bool = False
    exit_index: Optional[int] = None
    convention: str = "exact"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k,t,B_x,B_y,F_raw,F_der,barrier\n")
            t = self.path.times
            for k in range(self.path.K + 1):
                flag = 1 if (self.barrier_ok is None or k == 0 or self.barrier_ok[k - 1]) else 0
                fder = self.F_der[k] if self.F_der is not None else float("nan")
                fh.write(
                    f"{k},{t[k]!r},{self.path.positions[k,0]!r},{self.path.positions[k,1]!r},"
                    f"{self.F_raw[k]!r},{fder!r},{flag}\n"
                )


def _step_weights(field: FieldLadder, path: BrownianPath, j: int, convention: str):
    """Per-step interpolated (Y, exp-weight, barrier-max, inside) at left knots."""
    if convention not in ("exact", "raw"):
        raise DomainError("clock convention must be 'exact' or 'raw'")
    pts = path.positions[:-1]
    grid = field.grid
    inside = np.ones(len(pts), dtype=bool)
    if not grid.periodic:
        inside = grid.contains(pts)
    prep = bilinear_prepare(grid, pts, clip_outside=True)
    X = bilinear_apply(field.fields[j], prep)
    s2 = bilinear_apply(np.ascontiguousarray(field.variances[j]), prep)
    G = bilinear_apply(np.ascontiguousarray(field.barrier_running_max(j)), prep)
    w_exp = np.exp(2.0 * X - 2.0 * s2)
    if convention == "raw":
        # raw cutoff normalization eps^2 e^{2X}: multiply by e^{2 H}, H = sigma^2 - ln(1/eps)
        w_exp = w_exp * np.exp(2.0 * (s2 - j * math.log(2.0)))
    Y = 2.0 * s2 - X
    # truncation at the first exit: no mass accumulates outside the hull
    if not inside.all():
        first_out = int(np.argmax(~inside))
        inside[first_out:] = False
    return Y, w_exp, G, inside


def _cumsum0(w, dt):
    out = np.empty(len(w) + 1)
    out[0] = 0.0
    np.cumsum(w * dt, out=out[1:])
    return out


def clock_raw(field: FieldLadder, path: BrownianPath, j: int, convention: str = "exact") -> ClockPath:
    """Raw clock F(t_k) = sum_{i<k} e^{2 X_j(B_i) - 2 sigma^2_j(B_i)} dt."""
    Y, w_exp, _, inside = _step_weights(field, path, j, convention)
    w = np.where(inside, w_exp, 0.0)
    exited = not inside.all()
    return ClockPath(
        path=path,
        j=j,
        beta=None,
        F_raw=_cumsum0(w, path.dt),
        exited=exited,
        exit_index=int(np.argmin(inside)) if exited else None,
        convention=convention,
    )


def clock_derivative(
    field: FieldLadder,
    path: BrownianPath,
    j: int,
    beta: float = 15.0,
    escalate: bool = True,
    convention: str = "exact",
) -> ClockPath:
    """Derivative clocks along the path at scale j.

    With ``escalate`` the barrier is doubled until no knot violates it (the
    almost-sure identification of the truncated clock with the limit clock
    needs beta large enough); pass ``escalate=False`` to study truncation.
    """
    if beta < 0:
        raise DomainError("barrier beta must be >= 0")
    Y, w_exp, G, inside = _step_weights(field, path, j, convention)
    w_exp = np.where(inside, w_exp, 0.0)
    b = float(beta)
    for _ in range(64):
        ok = G <= b
        if not escalate or bool(np.all(ok | ~inside)):
            break
        b *= 2.0 if b > 0 else 1.0
        if b == 0.0:
            b = 1.0
    else:
        raise NumericError("barrier escalation failed to clear the path")
    keep = ok & inside
    dt = path.dt
    exited = not inside.all()
    return ClockPath(
        path=path,
        j=j,
        beta=b,
        F_raw=_cumsum0(w_exp, dt),
        F_der=_cumsum0((Y + b) * keep * w_exp, dt),
        F_der_tilde=_cumsum0(Y * keep * w_exp, dt),
        F_der_untruncated=_cumsum0(Y * w_exp, dt),
        barrier_ok=ok,
        exited=exited,
        exit_index=int(np.argmin(inside)) if exited else None,
        convention=convention,
    )


def invert_clock(clock: ClockPath, t: float) -> float:
    """Standard time s with sqrt(2/pi) F_der(s) = t, by monotone interpolation."""
    if clock.F_der is None:
        raise DomainError("invert_clock needs a derivative clock")
    if t < 0:
        raise DomainError("Liouville time must be >= 0")
    F = clock.F_der
    target = t / SQRT_2_OVER_PI
    if target > F[-1]:
        raise HorizonExceededError(
            f"Liouville time {t} beyond clock range {SQRT_2_OVER_PI * F[-1]:.6g}; extend T"
        )
    if t == 0.0:
        return 0.0
    k = int(np.searchsorted(F, target, side="left"))
    if k == 0:
        return 0.0
    dF = F[k] - F[k - 1]
    frac = 0.0 if dF == 0.0 else (target - F[k - 1]) / dF
    return (k - 1 + frac) * clock.path.dt


def clock_value_at(clock: ClockPath, s: float, which: str = "F_der") -> float:
    """Piecewise-linear clock value at standard time s (exact on knots)."""
    F = getattr(clock, which)
    return float(np.interp(s, clock.path.times, F))


def seneta_heyde_clock_ratio(
    spec,
    grid,
    ladder,
    path: BrownianPath,
    n_replicas: int,
    seed: int,
    wrap_tol: float = 5e-3,
):
    """Median over field replicas of sqrt(sigma^2_j) F_raw / F'_untruncated per scale.

    Only replicas with a positive untruncated clock enter the median; a scale
    where none is positive is skipped with a flag.  The norming constant the
    trend heads for is sqrt(2/pi).  Kernel families without compact-support
    or MFF/GFF structure get a warning flag instead of a verdict.
    """
    from .field import sample_field_ladder
    from .kernels import FOURIER

    if n_replicas < 50:
        raise DomainError("ratio sequence needs >= 50 replicas")
    J = ladder.J
    raws = np.zeros((n_replicas, J + 1))
    ders = np.zeros((n_replicas, J + 1))
    sig2 = np.zeros((n_replicas, J + 1))
    from .field import _replica_seed

    for r in range(n_replicas):
        fl = sample_field_ladder(spec, grid, ladder, _replica_seed(seed, r), wrap_tol)
        for j in range(1, J + 1):
            cp = clock_derivative(fl, path, j, beta=0.0, escalate=False)
            raws[r, j] = cp.F_raw[-1]
            ders[r, j] = cp.F_der_untruncated[-1]
            sig2[r, j] = fl.variance_scalar(j)
    medians = np.full(J + 1, np.nan)
    skipped = np.zeros(J + 1, dtype=bool)
    for j in range(1, J + 1):
        pos = ders[:, j] > 0
        if not pos.any():
            skipped[j] = True
            continue
        medians[j] = float(np.median(np.sqrt(sig2[pos, j]) * raws[pos, j] / ders[pos, j]))
    return {
        "medians": medians,
        "skipped": skipped,
        "target": SQRT_2_OVER_PI,
        "warning": "kernel family outside the ratio theorem's scope" if spec.family == FOURIER else None,
    }


def path_max_statistic(field: FieldLadder, path: BrownianPath, a_values=(0.1,)):
    """Per-scale max over knots of X_j - 2 sigma^2_j + a ln sigma^2_j.

    Returns the max table and, per a, which scales set a new running record;
    a bounded running sup shows up as no records at deep scales.
    """
    grid = field.grid
    pts = path.positions
    inside = np.ones(len(pts), dtype=bool)
    if not grid.periodic:
        inside = grid.contains(pts)
        if not inside.all():
            first_out = int(np.argmax(~inside))
            inside[first_out:] = False
            if not inside.any():
                raise DomainError("path starts outside the grid hull")
    prep = bilinear_prepare(grid, pts, clip_outside=True)
    J = field.ladder.J
    table = {a: np.full(J + 1, np.nan) for a in a_values}
    for j in range(1, J + 1):
        X = bilinear_apply(field.fields[j], prep)
        s2 = bilinear_apply(np.ascontiguousarray(field.variances[j]), prep)
        base = X - 2.0 * s2
        for a in a_values:
            vals = base + a * np.log(s2)
            table[a][j] = float(vals[inside].max())
    records = {}
    for a in a_values:
        rec = np.zeros(J + 1, dtype=bool)
        running = -np.inf
        for j in range(1, J + 1):
            if table[a][j] > running:
                rec[j] = j > 1  # the first scale always sets the sup
                running = table[a][j]
        records[a] = rec
    return {"max_table": table, "records": records}
