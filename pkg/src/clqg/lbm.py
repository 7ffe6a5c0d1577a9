"""Time-changed trajectories of the critical Liouville Brownian motion.

The motion is B evaluated at the inverse of the normalized derivative clock:
sqrt(2/pi) F'(x, <B>_t) = t.  Single trajectories extend their Brownian
horizon automatically until the clock covers the requested Liouville time;
ensemble statistics use a batched stepper that advances many trajectories to
per-trajectory clock targets in lockstep.

On a bounded rectangle with a Dirichlet GFF the clock can equivalently be
weighted by the squared conformal radius; ``conformal_radius_clock`` builds
that variant, which matches the deepest-scale cutoff clock in its raw
normalization up to the residual drift convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .clock import SQRT_2_OVER_PI, BrownianPath, ClockPath, clock_derivative, invert_clock, simulate_bm
from .dirichlet import conformal_radius
from .errors import DomainError, ResourceCapError
from .field import FieldLadder, bilinear_apply, bilinear_prepare, rng_for

__all__ = [
    "LbmTrajectory",
    "sample_lbm",
    "exit_time_gff",
    "conformal_radius_clock",
    "run_to_clock_target",
    "resolvent_paths",
]

# The heat-kernel cutoff variance of the Dirichlet GFF satisfies
# sigma^2_eps(x) - ln(1/eps) -> ln C(x, D) + (euler_gamma - ln 2)/2,
# so the raw clock's limiting weight is C(x, D)^2 e^{euler_gamma}/2.
CUTOFF_WEIGHT_CONSTANT = math.exp(np.euler_gamma) / 2.0


@dataclass
class LbmTrajectory:
    """Positions of the time-changed motion on a Liouville-time grid."""

    start: np.ndarray
    t_liouville: np.ndarray
    s_standard: np.ndarray
    positions: np.ndarray  # (M, 2)
    clock: ClockPath

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("m,t_liouville,s_standard,x,y\n")
            for m in range(len(self.t_liouville)):
                fh.write(
                    f"{m},{self.t_liouville[m]!r},{self.s_standard[m]!r},"
                    f"{self.positions[m,0]!r},{self.positions[m,1]!r}\n"
                )


def _position_at(path: BrownianPath, s: float) -> np.ndarray:
    k = min(int(s / path.dt), path.K - 1) if path.K else 0
    frac = s / path.dt - k
    return path.positions[k] + frac * (path.positions[k + 1] - path.positions[k])


def sample_lbm(
    field: FieldLadder,
    x,
    T_liouville: float,
    out_times,
    seed: int,
    beta: float = 15.0,
    j: Optional[int] = None,
    dt: Optional[float] = None,
    max_steps: int = 50_000_000,
) -> LbmTrajectory:
    """One trajectory, deterministic in seed, horizon extended as needed."""
    x = np.asarray(x, dtype=float)
    if not field.grid.periodic and not field.grid.contains(x):
        raise DomainError("start point outside grid hull")
    j = field.ladder.J if j is None else j
    dt = field.grid.dx**2 / 4.0 if dt is None else dt
    out_times = np.asarray(out_times, dtype=float)
    if np.any(out_times < 0) or np.any(out_times > T_liouville):
        raise DomainError("output times must lie in [0, T_liouville]")
    target = T_liouville / SQRT_2_OVER_PI
    T = max(64.0 * dt, T_liouville)
    while True:
        if T / dt > max_steps:
            raise ResourceCapError(
                f"horizon extension exceeded {max_steps} steps before the clock "
                f"covered Liouville time {T_liouville}"
            )
        path = simulate_bm(x, T, dt, seed)
        cp = clock_derivative(field, path, j, beta=beta)
        if cp.F_der[-1] >= target:
            break
        if cp.exited:
            raise DomainError("path left the grid hull before covering the horizon")
        T *= 2.0
    s = np.array([invert_clock(cp, t) for t in out_times])
    pos = np.array([_position_at(path, si) for si in s])
    return LbmTrajectory(start=x, t_liouville=out_times, s_standard=s, positions=pos, clock=cp)


def exit_time_gff(field: FieldLadder, x, seed: int, beta: float = 15.0, dt: Optional[float] = None, max_steps: int = 50_000_000):
    """Exit of the time-changed motion from the GFF's rectangle.

    Returns (tau, tau_hat): the first knot time outside the domain and the
    Liouville exit time sqrt(2/pi) F'(x, tau).
    """
    from .kernels import GFF_DIRICHLET

    if field.spec.family != GFF_DIRICHLET:
        raise DomainError("exit_time_gff needs a Dirichlet GFF field ladder")
    D = field.spec.domain
    x = np.asarray(x, dtype=float)
    if not D.contains(x):
        raise DomainError("start point outside the domain")
    dt = field.grid.dx**2 / 4.0 if dt is None else dt
    T = 1024.0 * dt
    while True:
        if T / dt > max_steps:
            raise ResourceCapError("no exit before the step cap")
        path = simulate_bm(x, T, dt, seed)
        outside = ~D.contains(path.positions)
        if outside.any():
            k_exit = int(np.argmax(outside))
            break
        T *= 2.0
    cp = clock_derivative(field, path, field.ladder.J, beta=beta)
    tau = k_exit * dt
    tau_hat = SQRT_2_OVER_PI * float(cp.F_der[k_exit])
    return tau, tau_hat


def conformal_radius_clock(gff_field: FieldLadder, path: BrownianPath) -> ClockPath:
    """Derivative clock weighted by the squared conformal radius.

    Uses the deepest-scale field with exact variance in the exponent and the
    weight C(x, D)^2 e^{euler_gamma}/2 in place of the cutoff normalization;
    agrees with the raw-convention ``clock_derivative`` at the deepest scale
    up to the residual convergence of the variance drift.
    """
    from .kernels import GFF_DIRICHLET

    if gff_field.spec.family != GFF_DIRICHLET:
        raise DomainError("conformal_radius_clock needs a Dirichlet GFF field ladder")
    D = gff_field.spec.domain
    j = gff_field.ladder.J
    grid = gff_field.grid
    pts = path.positions[:-1]
    inside = D.contains(pts, strict=True) & grid.contains(pts)
    prep = bilinear_prepare(grid, pts, clip_outside=True)
    X = bilinear_apply(gff_field.fields[j], prep)
    s2 = bilinear_apply(np.ascontiguousarray(gff_field.variances[j]), prep)
    C = np.zeros(len(pts))
    C[inside] = conformal_radius(pts[inside], D)
    w = C * C * CUTOFF_WEIGHT_CONSTANT * (2.0 * s2 - X) * np.exp(2.0 * X - 2.0 * s2)
    w[~inside] = 0.0
    F = np.empty(len(pts) + 1)
    F[0] = 0.0
    np.cumsum(w * path.dt, out=F[1:])
    exited = not inside.all()
    return ClockPath(
        path=path,
        j=j,
        beta=None,
        F_raw=F * 0.0,
        F_der=F,
        exited=exited,
        exit_index=int(np.argmin(inside)) if exited else None,
        convention="conformal",
    )


# ----------------------------------------------------------------------------
# batched ensemble engines


def _weight_grids(field: FieldLadder, j: int):
    X = field.fields[j]
    s2 = np.ascontiguousarray(field.variances[j])
    G = np.ascontiguousarray(field.barrier_running_max(j))
    return X, s2, G


def run_to_clock_target(
    field: FieldLadder,
    starts: np.ndarray,
    F_targets: np.ndarray,
    seed: int,
    j: Optional[int] = None,
    beta: float = 15.0,
    dt: Optional[float] = None,
    s_cap: float = np.inf,
    allow_unfinished: bool = False,
):
    """Advance N trajectories until the truncated clock reaches per-lane targets.

    Returns (end_positions, end_times, finished).  Endpoints interpolate the
    crossing step linearly, consistent with the piecewise-linear clock model.
    """
    j = field.ladder.J if j is None else j
    dt = field.grid.dx**2 / 4.0 if dt is None else dt
    X, s2, G = _weight_grids(field, j)
    rng = rng_for(seed, 0x1BA7)
    pos = np.array(starts, dtype=float)
    N = len(pos)
    F = np.zeros(N)
    s = 0.0
    end_pos = pos.copy()
    end_s = np.zeros(N)
    active = np.ones(N, dtype=bool)
    targets = np.asarray(F_targets, dtype=float)
    done0 = targets <= 0.0
    if done0.any():
        active[done0] = False
    sqdt = math.sqrt(dt)
    while active.any():
        if s >= s_cap:
            if allow_unfinished:
                end_pos[active] = pos[active]
                end_s[active] = s
                return end_pos, end_s, ~active
            raise ResourceCapError(f"clock targets not reached by standard time {s_cap}")
        idx = np.nonzero(active)[0]
        p = pos[idx]
        prep = bilinear_prepare(field.grid, p, clip_outside=True)
        Xi = bilinear_apply(X, prep)
        v = bilinear_apply(s2, prep)
        g = bilinear_apply(G, prep)
        w = (2.0 * v - Xi + beta) * (g <= beta) * np.exp(2.0 * Xi - 2.0 * v)
        if not field.grid.periodic:
            w = w * field.grid.contains(p)
        dF = w * dt
        inc = rng.standard_normal((len(idx), 2)) * sqdt
        newF = F[idx] + dF
        crossed = newF >= targets[idx]
        if crossed.any():
            ci = idx[crossed]
            frac = np.where(dF[crossed] > 0, (targets[ci] - F[ci]) / dF[crossed], 1.0)
            end_pos[ci] = p[crossed] + frac[:, None] * inc[crossed]
            end_s[ci] = s + frac * dt
            active[ci] = False
        F[idx] = newF
        pos[idx] = p + inc
        s += dt
    return end_pos, end_s, np.ones(N, dtype=bool)


def resolvent_paths(
    field: FieldLadder,
    x,
    lam: float,
    N: int,
    seed: int,
    f: Callable[[np.ndarray], np.ndarray],
    j: Optional[int] = None,
    beta: float = 15.0,
    dt: Optional[float] = None,
    tiny: float = 1e-8,
    s_cap: float = np.inf,
) -> np.ndarray:
    """Per-path resolvent functionals sqrt(2/pi) int e^{-lam sqrt(2/pi) F} f dF.

    The exponential factor is integrated exactly against the piecewise-linear
    clock (each step contributes f(B_k) [e^{-lam c F_k} - e^{-lam c F_{k+1}}] / lam),
    and the truncated tail beyond weight ``tiny`` is completed with the
    current value of f, so constants integrate to 1/lam per path.
    """
    if not lam > 0:
        raise DomainError("resolvent rate lambda must be positive")
    j = field.ladder.J if j is None else j
    dt = field.grid.dx**2 / 4.0 if dt is None else dt
    X, s2, G = _weight_grids(field, j)
    rng = rng_for(seed, 0x2E50)
    pos = np.tile(np.asarray(x, dtype=float), (N, 1))
    expw = np.ones(N)  # e^{-lam c F}
    acc = np.zeros(N)
    active = np.ones(N, dtype=bool)
    c = SQRT_2_OVER_PI
    sqdt = math.sqrt(dt)
    s = 0.0
    while active.any():
        if s >= s_cap:
            raise ResourceCapError(f"resolvent paths still running at standard time {s_cap}")
        idx = np.nonzero(active)[0]
        p = pos[idx]
        prep = bilinear_prepare(field.grid, p, clip_outside=True)
        Xi = bilinear_apply(X, prep)
        v = bilinear_apply(s2, prep)
        g = bilinear_apply(G, prep)
        w = (2.0 * v - Xi + beta) * (g <= beta) * np.exp(2.0 * Xi - 2.0 * v)
        if not field.grid.periodic:
            w = w * field.grid.contains(p)
        e_new = expw[idx] * np.exp(-lam * c * w * dt)
        fi = f(p)
        acc[idx] += fi * (expw[idx] - e_new) / lam
        expw[idx] = e_new
        done = e_new <= tiny
        if done.any():
            di = idx[done]
            acc[di] += fi[done] * expw[di] / lam
            active[di] = False
        still = idx[~done]
        if still.size:
            pos[still] += rng.standard_normal((len(still), 2)) * sqdt
        s += dt
    return acc
