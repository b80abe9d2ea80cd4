"""Trainable vector fields: small tanh networks on the reverse-mode tape.

Three two-layer networks share one flat parameter vector: the generative
drift, the variational drift, and a diagonal diffusion head (softplus plus a
floor keeps it invertible).  A learned initial state completes the parameter
set.  Every evaluator exists twice: on the tape for gradients and as a plain
numpy function for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .errors import InvalidParameter
from .tape import Var


@dataclass(frozen=True)
class _Layer:
    w_slice: slice
    b_slice: slice
    shape: tuple[int, int]


@dataclass(frozen=True)
class _Net:
    hidden: _Layer
    out: _Layer


def _mlp_layout(offset: int, d_in: int, width: int, d_out: int) -> tuple[_Net, int]:
    w1 = slice(offset, offset + d_in * width)
    offset = w1.stop
    b1 = slice(offset, offset + width)
    offset = b1.stop
    w2 = slice(offset, offset + width * d_out)
    offset = w2.stop
    b2 = slice(offset, offset + d_out)
    offset = b2.stop
    return _Net(_Layer(w1, b1, (d_in, width)), _Layer(w2, b2, (width, d_out))), offset


class NetworkFields:
    """Parameter layout and evaluators for the three field networks.

    ``d_b`` equals ``d_x`` so the diagonal diffusion is invertible wherever
    the KL penalty needs its inverse.  ``zero_diffusion=True`` pins the
    diffusion to exactly zero for deterministic-dynamics tests.
    """

    def __init__(
        self,
        d_x: int,
        width: int = 8,
        diffusion_floor: float = 0.05,
        zero_diffusion: bool = False,
    ):
        if d_x < 1 or width < 1:
            raise InvalidParameter("d_x and width must be >= 1")
        self.d_x = d_x
        self.d_b = d_x
        self.width = width
        self.diffusion_floor = diffusion_floor
        self.zero_diffusion = zero_diffusion
        offset = 0
        self.prior, offset = _mlp_layout(offset, d_x + 1, width, d_x)
        self.posterior, offset = _mlp_layout(offset, d_x + 1, width, d_x)
        self.diffusion, offset = _mlp_layout(offset, d_x + 1, width, d_x)
        self.z0_slice = slice(offset, offset + d_x)
        self.n_params = offset + d_x

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for net in (self.prior, self.posterior, self.diffusion):
            for layer in (net.hidden, net.out):
                fan_in = layer.shape[0]
                theta[layer.w_slice] = rng.normal(
                    0.0, 0.5 / np.sqrt(fan_in), layer.w_slice.stop - layer.w_slice.start
                )
        theta[self.z0_slice] = 0.0
        return theta

    # tape-side evaluation -------------------------------------------------

    def wrap(self, theta: np.ndarray) -> dict[str, Var]:
        """Wrap a flat parameter vector into tape leaves (one per tensor)."""
        if theta.shape != (self.n_params,):
            raise InvalidParameter(
                f"parameter vector has shape {theta.shape}, expected ({self.n_params},)"
            )
        leaves: dict[str, Var] = {}
        for name, net in (
            ("prior", self.prior),
            ("posterior", self.posterior),
            ("diffusion", self.diffusion),
        ):
            for part, layer in (("hidden", net.hidden), ("out", net.out)):
                leaves[f"{name}.{part}.w"] = tape.const(
                    theta[layer.w_slice].reshape(layer.shape)
                )
                leaves[f"{name}.{part}.b"] = tape.const(theta[layer.b_slice])
        leaves["z0"] = tape.const(theta[self.z0_slice])
        return leaves

    def collect_grad(self, leaves: dict[str, Var]) -> np.ndarray:
        grad = np.zeros(self.n_params)
        for name, net in (
            ("prior", self.prior),
            ("posterior", self.posterior),
            ("diffusion", self.diffusion),
        ):
            for part, layer in (("hidden", net.hidden), ("out", net.out)):
                gw = leaves[f"{name}.{part}.w"].grad
                gb = leaves[f"{name}.{part}.b"].grad
                if gw is not None:
                    grad[layer.w_slice] = np.asarray(gw).ravel()
                if gb is not None:
                    grad[layer.b_slice] = np.asarray(gb)
        gz = leaves["z0"].grad
        if gz is not None:
            grad[self.z0_slice] = np.asarray(gz)
        return grad

    def _mlp(self, leaves: dict[str, Var], name: str, x: Var, t: float) -> Var:
        inp = tape.with_time(x, t)
        h = tape.tanh(
            tape.add_row(tape.matmul(inp, leaves[f"{name}.hidden.w"]), leaves[f"{name}.hidden.b"])
        )
        return tape.add_row(tape.matmul(h, leaves[f"{name}.out.w"]), leaves[f"{name}.out.b"])

    def drift_prior(self, leaves, x: Var, t: float) -> Var:
        return self._mlp(leaves, "prior", x, t)

    def drift_posterior(self, leaves, x: Var, t: float) -> Var:
        return self._mlp(leaves, "posterior", x, t)

    def diffusion_diag(self, leaves, x: Var, t: float) -> Var:
        """Diagonal diffusion: softplus(head) + floor, or exactly zero."""
        if self.zero_diffusion:
            return tape.const(np.zeros((x.value.shape[0], self.d_x)))
        head = self._mlp(leaves, "diffusion", x, t)
        return tape.cadd(tape.softplus(head), self.diffusion_floor)

    def initial_state(self, leaves, batch: int) -> Var:
        z0 = leaves["z0"]
        return Var(
            np.broadcast_to(z0.value, (batch, self.d_x)).copy(),
            (z0,),
            lambda g: (g.sum(axis=0),),
        )

    # numpy-side evaluation ------------------------------------------------

    def _mlp_np(self, theta: np.ndarray, net: _Net, x: np.ndarray, t) -> np.ndarray:
        t_col = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (x.shape[0], 1))
        inp = np.concatenate([t_col, x], axis=1)
        w1 = theta[net.hidden.w_slice].reshape(net.hidden.shape)
        h = np.tanh(inp @ w1 + theta[net.hidden.b_slice])
        w2 = theta[net.out.w_slice].reshape(net.out.shape)
        return h @ w2 + theta[net.out.b_slice]

    def drift_prior_np(self, theta, x, t) -> np.ndarray:
        return self._mlp_np(theta, self.prior, x, t)

    def drift_posterior_np(self, theta, x, t) -> np.ndarray:
        return self._mlp_np(theta, self.posterior, x, t)

    def diffusion_diag_np(self, theta, x, t) -> np.ndarray:
        if self.zero_diffusion:
            return np.zeros((x.shape[0], self.d_x))
        head = self._mlp_np(theta, self.diffusion, x, t)
        return np.logaddexp(0.0, head) + self.diffusion_floor

    def z0_np(self, theta) -> np.ndarray:
        return theta[self.z0_slice].copy()
