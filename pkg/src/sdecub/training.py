"""Toy latent-SDE training: cubature and Monte Carlo gradient arms.

Both arms minimise the same variational objective: a Gaussian reconstruction
log-density against data paths plus a drift-mismatch penalty between the
generative and variational drifts sharing one diagonal diffusion.  The
cubature arm solves deterministic controlled ODEs along pre-processed tree
paths (the same weight table serves every epoch); the Monte Carlo arm
differentiates pathwise through Euler-Maruyama solves with frozen per-epoch
noise.  Gradients come from the recorded tape in both cases.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import DivergenceDetected, InvalidParameter, SingularDiffusion
from .estimator import _leaf_derivative_table
from .formulas import CubatureFormula, degree3_formula
from .nets import NetworkFields
from .ode import Trajectory, solve_sde_mc_batch
from .partition import TimePartition, make_partition
from .recombination import TestBasis, WeightTable, preprocess
from .tape import Var


@dataclass(frozen=True)
class VariationalLossSpec:
    """Observation model and data for the variational objective.

    ``data_values`` holds one or more observed paths, shape
    (n_paths, n_times, d_x); the decoder is Gaussian with fixed noise.
    """

    data_times: np.ndarray
    data_values: np.ndarray
    obs_noise: float
    kl_weight: float = 1.0

    def __post_init__(self):
        if self.data_values.ndim != 3:
            raise InvalidParameter("data_values must have shape (paths, times, d)")
        if self.data_values.shape[1] != self.data_times.shape[0]:
            raise InvalidParameter("data grid and values disagree")
        if self.obs_noise <= 0:
            raise InvalidParameter("observation noise must be positive")

    @property
    def d_x(self) -> int:
        return self.data_values.shape[2]


def _resampled_stats(spec: VariationalLossSpec, times: np.ndarray):
    """Mean data path and across-path spread on the solver grid.

    The Gaussian reconstruction term only needs the data mean and the
    (state-independent) spread: mean_j |y_j - z|^2 = |ybar - z|^2 + c.
    """
    n_paths, _, d = spec.data_values.shape
    resampled = np.empty((n_paths, times.shape[0], d))
    for j in range(n_paths):
        for c in range(d):
            resampled[j, :, c] = np.interp(
                times, spec.data_times, spec.data_values[j, :, c]
            )
    ybar = resampled.mean(axis=0)
    spread = np.sum((resampled - ybar) ** 2, axis=(0, 2)) / n_paths
    return ybar, spread


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _loss_graph(
    nets: NetworkFields,
    leaves: dict[str, Var],
    times: np.ndarray,
    states: list[Var],
    batch_weights: np.ndarray,
    spec: VariationalLossSpec,
):
    """Scalar loss node plus its constant (parameter-free) part.

    Loss = -reconstruction + kl_weight * drift-mismatch penalty, both
    trapezoid integrals on the solver grid, weighted over the path batch.
    """
    ybar, spread = _resampled_stats(spec, times)
    tau = _trapezoid_weights(times)
    inv_two_var = 1.0 / (2.0 * spec.obs_noise**2)
    d = nets.d_x
    total: Var | None = None
    min_diffusion = np.inf
    for i, (t, z) in enumerate(zip(times, states)):
        resid = tape.cadd(z, -ybar[i])
        integrand = tape.cmul(tape.row_sumsq(resid), inv_two_var)
        if spec.kl_weight != 0.0:
            f_prior = nets.drift_prior(leaves, z, t)
            f_post = nets.drift_posterior(leaves, z, t)
            g = nets.diffusion_diag(leaves, z, t)
            min_diffusion = min(min_diffusion, float(np.min(np.abs(g.value))))
            mismatch = tape.mul(tape.sub(f_prior, f_post), tape.reciprocal(g))
            integrand = tape.add(
                integrand, tape.cmul(tape.row_sumsq(mismatch), 0.5 * spec.kl_weight)
            )
        term = tape.wsum(integrand, tau[i] * batch_weights)
        total = term if total is None else tape.add(total, term)
    if spec.kl_weight != 0.0 and min_diffusion < 1e-10:
        raise SingularDiffusion(
            f"diffusion magnitude {min_diffusion:.2e} below 1e-10 on the grid"
        )
    mass = float(batch_weights.sum())
    const = mass * float(
        np.dot(tau, 0.5 * d * math.log(2.0 * math.pi * spec.obs_noise**2) + spread * inv_two_var)
    )
    return total, const


def variational_loss_terms(
    nets: NetworkFields, theta: np.ndarray, trajectory: Trajectory, spec: VariationalLossSpec
) -> tuple[float, float]:
    """(reconstruction log-density R, drift-mismatch penalty K) of one path."""
    times = trajectory.times
    z = trajectory.spatial
    ybar, spread = _resampled_stats(spec, times)
    tau = _trapezoid_weights(times)
    var = spec.obs_noise**2
    d = z.shape[1]
    log_norm = -0.5 * d * math.log(2.0 * math.pi * var)
    resid = np.sum((z - ybar) ** 2, axis=1) + spread
    recon = float(np.dot(tau, log_norm - resid / (2.0 * var)))
    f_prior = nets.drift_prior_np(theta, z, times)
    f_post = nets.drift_posterior_np(theta, z, times)
    g = nets.diffusion_diag_np(theta, z, times)
    if spec.kl_weight != 0.0:
        if np.min(np.abs(g)) < 1e-10:
            raise SingularDiffusion("diffusion not invertible on the trajectory grid")
        kl = float(np.dot(tau, 0.5 * np.sum(((f_prior - f_post) / g) ** 2, axis=1)))
    else:
        kl = 0.0
    return recon, kl


def variational_loss(
    nets: NetworkFields, theta: np.ndarray, trajectory: Trajectory, spec: VariationalLossSpec
) -> float:
    """Negative evidence bound of one trajectory: -R + kl_weight * K."""
    recon, kl = variational_loss_terms(nets, theta, trajectory, spec)
    return -recon + spec.kl_weight * kl


def _rk4_tape(nets, leaves, z: Var, t0: float, h: float, slope: np.ndarray) -> Var:
    def rhs(state, t):
        f = nets.drift_posterior(leaves, state, t)
        g = nets.diffusion_diag(leaves, state, t)
        return tape.add(f, tape.cmul(g, slope))

    k1 = rhs(z, t0)
    k2 = rhs(tape.add(z, tape.cmul(k1, 0.5 * h)), t0 + 0.5 * h)
    k3 = rhs(tape.add(z, tape.cmul(k2, 0.5 * h)), t0 + 0.5 * h)
    k4 = rhs(tape.add(z, tape.cmul(k3, h)), t0 + h)
    incr = tape.add(tape.add(k1, k4), tape.cmul(tape.add(k2, k3), 2.0))
    return tape.add(z, tape.cmul(incr, h / 6.0))


@dataclass(frozen=True)
class GradientReport:
    loss: float
    gradient: np.ndarray
    n_paths: int
    tape_bytes: int


def loss_and_gradient_cubature(
    nets: NetworkFields,
    theta: np.ndarray,
    table: WeightTable,
    formula: CubatureFormula,
    partition: TimePartition,
    spec: VariationalLossSpec,
    steps_per_segment: int = 8,
) -> GradientReport:
    """Reverse-mode gradient of the weighted per-leaf variational loss.

    One controlled ODE per surviving leaf, batched; the gradient is the
    weighted sum of per-leaf gradients by linearity of the tape.
    """
    leaves_sorted = sorted(table.leaf_weights().items())
    if not leaves_sorted:
        return GradientReport(0.0, np.zeros(nets.n_params), 0, 0)
    seg_times, slopes, n_seg = _leaf_derivative_table(formula, partition)
    iv = np.array([list(p) for p, _ in leaves_sorted], dtype=int) - 1
    weights = np.array([w for _, w in leaves_sorted])
    k = partition.k
    derivs = slopes[np.arange(k)[None, :], iv].reshape(iv.shape[0], k * n_seg, formula.dim)
    leaves = nets.wrap(theta)
    z = nets.initial_state(leaves, batch=iv.shape[0])
    times = [seg_times[0]]
    states = [z]
    for seg in range(k * n_seg):
        h = (seg_times[seg + 1] - seg_times[seg]) / steps_per_segment
        for step in range(steps_per_segment):
            z = _rk4_tape(nets, leaves, z, times[-1], h, derivs[:, seg, :])
            times.append(seg_times[seg] + (step + 1) * h)
            states.append(z)
        times[-1] = seg_times[seg + 1]
    root, const = _loss_graph(nets, leaves, np.array(times), states, weights, spec)
    order = tape.backward(root)
    grad = nets.collect_grad(leaves)
    tape.check_finite_gradient(grad)
    return GradientReport(
        loss=float(root.value) + const,
        gradient=grad,
        n_paths=iv.shape[0],
        tape_bytes=tape.tape_bytes(order),
    )


def loss_and_gradient_mc(
    nets: NetworkFields,
    theta: np.ndarray,
    n_paths: int,
    grid: int,
    seed,
    spec: VariationalLossSpec,
    T: float = 1.0,
) -> GradientReport:
    """Pathwise Monte Carlo gradient through Euler-Maruyama with frozen noise."""
    if n_paths < 1:
        raise InvalidParameter("n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    h = T / grid
    noise = rng.standard_normal((grid, n_paths, nets.d_x)) * math.sqrt(h)
    leaves = nets.wrap(theta)
    z = nets.initial_state(leaves, batch=n_paths)
    times = np.linspace(0.0, T, grid + 1)
    states = [z]
    for step in range(grid):
        t = times[step]
        f = nets.drift_posterior(leaves, z, t)
        g = nets.diffusion_diag(leaves, z, t)
        z = tape.add(z, tape.add(tape.cmul(f, h), tape.cmul(g, noise[step])))
        states.append(z)
    weights = np.full(n_paths, 1.0 / n_paths)
    root, const = _loss_graph(nets, leaves, times, states, weights, spec)
    order = tape.backward(root)
    grad = nets.collect_grad(leaves)
    tape.check_finite_gradient(grad)
    return GradientReport(
        loss=float(root.value) + const,
        gradient=grad,
        n_paths=n_paths,
        tape_bytes=tape.tape_bytes(order),
    )


@dataclass
class TrainConfig:
    """Everything needed to reproduce one training comparison run."""

    d_x: int = 1
    width: int = 8
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 7
    degree: int = 3
    k: int = 5
    gamma: float = 0.6
    basis_degree: int = 2
    p_star: int = 2
    T: float = 1.0
    steps_per_segment: int = 8
    mc_grid: int = 200
    obs_noise: float = 0.4
    kl_weight: float = 1.0
    n_data: int = 4
    data_grid: int = 64
    data_rate: float = 1.5
    data_mean: float = 0.5
    data_sigma: float = 0.3
    data_seed: int = 1234
    divergence_threshold: float = 1e6


@dataclass(frozen=True)
class TrainRow:
    epoch: int
    arm: str
    loss: float
    seconds: float
    peak_bytes: int


@dataclass
class TrainingLog:
    rows: list[TrainRow]
    n_paths: int
    theta_cubature: np.ndarray
    theta_mc: np.ndarray

    def losses(self, arm: str) -> np.ndarray:
        return np.array([r.loss for r in self.rows if r.arm == arm])

    def seconds(self, arm: str) -> np.ndarray:
        return np.array([r.seconds for r in self.rows if r.arm == arm])

    def peak_bytes(self, arm: str) -> np.ndarray:
        return np.array([r.peak_bytes for r in self.rows if r.arm == arm])

    def to_csv(self) -> str:
        lines = ["epoch,arm,loss,seconds,peak_bytes"]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.arm},{format(r.loss, '.17g')},"
                f"{format(r.seconds, '.6f')},{r.peak_bytes}"
            )
        return "\n".join(lines) + "\n"


def make_training_data(config: TrainConfig) -> VariationalLossSpec:
    """Seeded mean-reverting data paths stored on a fixed grid."""
    d = config.d_x

    def mu(t, x):
        return config.data_rate * (config.data_mean - x)

    def sigma(t, x):
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = config.data_sigma
        return out

    rng = np.random.default_rng(config.data_seed)
    times, paths = solve_sde_mc_batch(
        mu, sigma, np.zeros(d), config.T, config.data_grid, rng, config.n_data
    )
    return VariationalLossSpec(
        data_times=times,
        data_values=paths,
        obs_noise=config.obs_noise,
        kl_weight=config.kl_weight,
    )


def build_tree(config: TrainConfig):
    """Formula, partition, and weight table shared by every training epoch."""
    formula = degree3_formula(config.d_x)
    partition = make_partition(config.T, config.k, config.gamma)
    basis = TestBasis(dim=config.d_x, degree=config.basis_degree)
    table = preprocess(formula, partition, basis, p_star=config.p_star)
    return formula, partition, table


def train(config: TrainConfig, spec: VariationalLossSpec | None = None) -> TrainingLog:
    """Gradient descent with both estimators from one shared initialisation.

    The Monte Carlo arm redraws its driving noise every epoch; the cubature
    arm reuses the weight table built once up front, so its log is
    reproducible bit for bit.
    """
    if spec is None:
        spec = make_training_data(config)
    if spec.d_x != config.d_x:
        raise InvalidParameter("data dimension does not match config")
    formula, partition, table = build_tree(config)
    n_paths = table.n_leaves
    nets = NetworkFields(config.d_x, width=config.width)
    theta0 = nets.init_params(config.seed)
    theta_cub = theta0.copy()
    theta_mc = theta0.copy()
    rows: list[TrainRow] = []
    mc_seeds = np.random.SeedSequence(config.seed).generate_state(config.epochs)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        rep = loss_and_gradient_cubature(
            nets, theta_cub, table, formula, partition, spec,
            steps_per_segment=config.steps_per_segment,
        )
        theta_cub -= config.lr * rep.gradient
        rows.append(
            TrainRow(epoch, "cubature", rep.loss, time.perf_counter() - start, rep.tape_bytes)
        )
        if abs(rep.loss) > config.divergence_threshold:
            raise DivergenceDetected(f"cubature loss {rep.loss:.3e} at epoch {epoch}")
        start = time.perf_counter()
        rep = loss_and_gradient_mc(
            nets, theta_mc, n_paths, config.mc_grid, int(mc_seeds[epoch]), spec, T=config.T
        )
        theta_mc -= config.lr * rep.gradient
        rows.append(
            TrainRow(epoch, "mc", rep.loss, time.perf_counter() - start, rep.tape_bytes)
        )
        if abs(rep.loss) > config.divergence_threshold:
            raise DivergenceDetected(f"mc loss {rep.loss:.3e} at epoch {epoch}")
    return TrainingLog(rows=rows, n_paths=n_paths, theta_cubature=theta_cub, theta_mc=theta_mc)
