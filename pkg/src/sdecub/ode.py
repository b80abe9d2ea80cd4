"""Controlled ODE solves along piecewise-linear paths and the MC baseline.

States are time-augmented: component 0 is physical time, so drift fields have
a constant 1 there and diffusion fields a constant 0.  Controlled equations
``dphi = sum_i V_i(phi) domega^i`` driven by piecewise-linear paths reduce to
classical ODEs with piecewise-constant path derivatives and are integrated
with the classical fourth-order one-step method, batched across paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, NonFiniteState
from .formulas import PiecewisePath


@dataclass(frozen=True)
class VectorFieldSet:
    """Stratonovich fields on the augmented state R^{d_x+1}.

    ``drift(x)`` maps (B, d_x+1) -> (B, d_x+1) with component 0 equal to 1;
    ``diffusion(x)`` maps (B, d_x+1) -> (B, d_x+1, d_b) with component 0 rows
    equal to 0.  Evaluators must be pure and safe to call concurrently.
    """

    state_dim: int
    driving_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]


def _augment_drift(mu):
    def drift(x):
        t = x[:, 0]
        out = np.empty_like(x)
        out[:, 0] = 1.0
        out[:, 1:] = mu(t, x[:, 1:])
        return out

    return drift


def _augment_diffusion(sigma, d_b):
    def diffusion(x):
        t = x[:, 0]
        body = sigma(t, x[:, 1:])
        out = np.zeros((x.shape[0], x.shape[1], d_b))
        out[:, 1:, :] = body
        return out

    return diffusion


def forward_difference_jacobian(sigma, t, x):
    """Forward-difference Jacobian of sigma in the state, shape (B, d_x, d_b, d_x).

    Step sqrt(machine eps) * (1 + |x_j|) per coordinate.
    """
    x = np.atleast_2d(x)
    base = sigma(t, x)
    d_x = x.shape[1]
    d_b = base.shape[2]
    jac = np.empty((x.shape[0], base.shape[1], d_b, d_x))
    root_eps = math.sqrt(np.finfo(float).eps)
    for j in range(d_x):
        h = root_eps * (1.0 + np.abs(x[:, j]))
        shifted = x.copy()
        shifted[:, j] += h
        jac[:, :, :, j] = (sigma(t, shifted) - base) / h[:, None, None]
    return jac


def ito_to_stratonovich(
    mu,
    sigma,
    d_x: int,
    d_b: int,
    sigma_jacobian=None,
) -> VectorFieldSet:
    """Convert Ito coefficients to augmented Stratonovich fields.

    ``mu(t, x)`` returns (B, d_x), ``sigma(t, x)`` returns (B, d_x, d_b).
    The corrected drift is ``mu - (1/2) sum_i J_{sigma_i} sigma_i``; the time
    derivative of sigma drops out because the diffusion fields carry no time
    component.  Without an analytic ``sigma_jacobian(t, x)`` the Jacobian is
    taken by forward differences.
    """
    probe_t = np.zeros(1)
    probe_x = np.zeros((1, d_x))
    mu_shape = np.shape(mu(probe_t, probe_x))
    sig_shape = np.shape(sigma(probe_t, probe_x))
    if mu_shape != (1, d_x):
        raise DimensionMismatch(f"mu returned shape {mu_shape}, expected (1, {d_x})")
    if sig_shape != (1, d_x, d_b):
        raise DimensionMismatch(
            f"sigma returned shape {sig_shape}, expected (1, {d_x}, {d_b})"
        )
    jac = sigma_jacobian
    if jac is None:
        jac = lambda t, x: forward_difference_jacobian(sigma, t, x)

    def corrected(t, x):
        j = jac(t, x)  # (B, d_x, d_b, d_x)
        s = sigma(t, x)  # (B, d_x, d_b)
        correction = 0.5 * np.einsum("bjid,bdi->bj", j, s)
        return mu(t, x) - correction

    return VectorFieldSet(
        state_dim=d_x,
        driving_dim=d_b,
        drift=_augment_drift(corrected),
        diffusion=_augment_diffusion(sigma, d_b),
    )


def stratonovich_fields(v0, v, d_x: int, d_b: int) -> VectorFieldSet:
    """Wrap spatial Stratonovich coefficients directly (no correction)."""
    return VectorFieldSet(
        state_dim=d_x,
        driving_dim=d_b,
        drift=_augment_drift(v0),
        diffusion=_augment_diffusion(v, d_b),
    )


@dataclass(frozen=True)
class Trajectory:
    """Grid times and augmented states; dense output by linear interpolation."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.times.shape[0]:
            raise InvalidParameter("times and values disagree in length")

    @property
    def spatial(self) -> np.ndarray:
        """States without the time component, shape (n, d_x)."""
        return self.values[:, 1:]

    def at(self, t: float) -> np.ndarray:
        out = np.empty(self.values.shape[1])
        for c in range(self.values.shape[1]):
            out[c] = np.interp(t, self.times, self.values[:, c])
        return out

    def to_csv(self) -> str:
        d = self.values.shape[1] - 1
        header = "t," + ",".join(f"x_{i}" for i in range(d))
        rows = [header]
        for i in range(self.times.shape[0]):
            rows.append(",".join(format(v, ".17g") for v in self.values[i]))
        return "\n".join(rows) + "\n"


def initial_state(zeta=None, v: np.ndarray | None = None, d_x: int = 1, d_v: int = 1):
    """Augmented initial state (0, zeta(v)); v defaults to the origin."""
    if v is None:
        v = np.zeros(d_v)
    spatial = np.asarray(zeta(v), dtype=float) if zeta is not None else np.asarray(v, float)
    if spatial.shape != (d_x,):
        raise DimensionMismatch(f"initial state has shape {spatial.shape}, expected ({d_x},)")
    out = np.zeros(d_x + 1)
    out[1:] = spatial
    return out


def _rk4_segments(fields, times, derivs, x0, steps_per_segment):
    """Batched classical RK4 over shared segments with constant path slopes.

    ``times`` is the shared segment grid (S+1,), ``derivs`` holds Brownian
    slopes per path and segment, shape (B, S, d_b).  Returns the full step
    grid and states (B, n_steps+1, d_x+1).
    """
    batch = derivs.shape[0]
    n_seg = times.shape[0] - 1
    d_aug = x0.shape[-1]
    n_total = n_seg * steps_per_segment
    out_times = np.empty(n_total + 1)
    out = np.empty((batch, n_total + 1, d_aug))
    state = np.broadcast_to(x0, (batch, d_aug)).copy()
    out_times[0] = times[0]
    out[:, 0] = state
    pos = 0

    def rhs(x, g):
        v = fields.drift(x).copy()
        v += np.einsum("bdi,bi->bd", fields.diffusion(x), g)
        return v

    for seg in range(n_seg):
        h = (times[seg + 1] - times[seg]) / steps_per_segment
        g = derivs[:, seg, :]
        for step in range(steps_per_segment):
            k1 = rhs(state, g)
            k2 = rhs(state + 0.5 * h * k1, g)
            k3 = rhs(state + 0.5 * h * k2, g)
            k4 = rhs(state + h * k3, g)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            pos += 1
            out_times[pos] = times[seg] + (step + 1) * h
            out[:, pos] = state
        if not np.all(np.isfinite(state)):
            raise NonFiniteState(f"state left the finite range in segment {seg}")
        out_times[pos] = times[seg + 1]
    return out_times, out


def solve_controlled_ode(
    fields: VectorFieldSet,
    path: PiecewisePath,
    x0: np.ndarray,
    steps_per_segment: int = 32,
) -> Trajectory:
    """Integrate ``dphi = sum_i V_i(phi) domega^i`` along one path.

    The piecewise-linear path has a piecewise-constant derivative, so each
    segment is a classical autonomous ODE integrated with fixed-step RK4;
    step boundaries align with path breakpoints.
    """
    if path.dim != fields.driving_dim:
        raise DimensionMismatch(
            f"path dimension {path.dim} != driving dimension {fields.driving_dim}"
        )
    if steps_per_segment < 1:
        raise InvalidParameter("steps_per_segment must be >= 1")
    inc = path.increments()
    dt = np.diff(path.breakpoints)
    derivs = (inc[:, 1:] / dt[:, None])[None, :, :]
    times, states = _rk4_segments(fields, path.breakpoints, derivs, np.asarray(x0, float), steps_per_segment)
    return Trajectory(times=times, values=states[0])


def solve_controlled_ode_batch(
    fields: VectorFieldSet,
    seg_times: np.ndarray,
    derivs: np.ndarray,
    x0: np.ndarray,
    steps_per_segment: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched variant over paths sharing one segment grid; see _rk4_segments."""
    return _rk4_segments(fields, seg_times, derivs, np.asarray(x0, float), steps_per_segment)


def solve_sde_mc(
    mu,
    sigma,
    x0: np.ndarray,
    T: float,
    grid: int,
    seed: int,
) -> Trajectory:
    """One Euler-Maruyama path of the Ito SDE with seeded Gaussian increments.

    Identical seeds give bit-identical trajectories.
    """
    times, paths = solve_sde_mc_batch(mu, sigma, x0, T, grid, np.random.default_rng(seed), 1)
    values = np.empty((grid + 1, paths.shape[2] + 1))
    values[:, 0] = times
    values[:, 1:] = paths[0]
    return Trajectory(times=times, values=values)


def solve_sde_mc_batch(
    mu,
    sigma,
    x0: np.ndarray,
    T: float,
    grid: int,
    rng: np.random.Generator,
    n_paths: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama for a batch of paths; returns (times, states (B, n+1, d_x))."""
    if grid < 1:
        raise InvalidParameter("grid size must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d_x = x0.shape[0]
    h = T / grid
    root_h = math.sqrt(h)
    times = np.linspace(0.0, T, grid + 1)
    out = np.empty((n_paths, grid + 1, d_x))
    state = np.broadcast_to(x0, (n_paths, d_x)).copy()
    out[:, 0] = state
    d_b = sigma(np.zeros(1), state[:1]).shape[2]
    for step in range(grid):
        t = np.full(n_paths, times[step])
        dw = rng.standard_normal((n_paths, d_b)) * root_h
        drift = mu(t, state)
        diff = sigma(t, state)
        state = state + drift * h + np.einsum("bdi,bi->bd", diff, dw)
        out[:, step + 1] = state
    if not np.all(np.isfinite(out[:, -1])):
        raise NonFiniteState("Euler-Maruyama state left the finite range")
    return times, out
