"""Per-agent proximal ADMM steps.

One round for agent ``i``:

1. ``x_update``: solve ``Qhat_i x = -qhat_i(s)`` with the cached factor.
2. ``make_messages``: send ``E_ij x_i - e_ij - lambda_ij / rho`` to each
   coupled neighbor.
3. ``y_update``: average the own and the received payload.
4. ``lambda_update``: ``lambda_ij -= rho (E_ij x_i - e_ij - y_ij)``.

All functions touch only the agent's own state plus delivered messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import NotPositiveDefiniteError, spd_factor, spd_solve_factored
from .reformulation import AgentProgram

G_POLICIES = ("zero", "shift", "explicit")


class NumericalConfigurationError(RuntimeError):
    """``Qhat_i`` stays singular even after the proximal shift."""


class ProtocolError(RuntimeError):
    """A round could not complete because a message is missing or malformed."""


@dataclass(frozen=True)
class AdmmParams:
    rho: float = 1.0
    g_policy: str = "zero"
    eps_shift: float = 1e-6
    g_diag: dict | None = None  # agent -> nonnegative diagonal, for g_policy="explicit"
    max_iters: int = 20000
    tol_primal: float = 1e-9
    tol_delta: float = 1e-9

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.eps_shift > 0:
            raise ValueError(f"eps_shift must be positive, got {self.eps_shift}")
        if self.g_policy not in G_POLICIES:
            raise ValueError(f"unknown g_policy {self.g_policy!r}")
        if self.g_policy == "explicit" and self.g_diag is None:
            raise ValueError("g_policy='explicit' needs g_diag")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class FactorizedQhat:
    Qhat: np.ndarray
    chol: np.ndarray  # lower triangular
    G: np.ndarray | None  # diagonal of G_i; None means G_i = 0
    shifted: bool = False


@dataclass
class AgentState:
    """Iterates of one agent. ``y``/``lam`` stack the coupled neighbors' rows
    in the order of ``program.edge_slices``."""

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    s: int = 0
    m: np.ndarray | None = None  # E x(s) - e, set by make_messages
    payload: np.ndarray | None = None  # last sent payload, all neighbors
    x_prev: np.ndarray | None = None

    def y_of(self, program: AgentProgram, j: int) -> np.ndarray:
        return self.y[program.edge_slices[j]]

    def lam_of(self, program: AgentProgram, j: int) -> np.ndarray:
        return self.lam[program.edge_slices[j]]


@dataclass(frozen=True)
class Message:
    sender: int
    to: int
    round: int
    payload: np.ndarray


def initial_state(program: AgentProgram, rng: np.random.Generator | None = None) -> AgentState:
    """Zero state, or a standard-normal random one when ``rng`` is given."""
    nx, ne = program.layout.x_dim, program.E_stack.shape[0]
    if rng is None:
        return AgentState(np.zeros(nx), np.zeros(ne), np.zeros(ne))
    return AgentState(rng.standard_normal(nx), rng.standard_normal(ne), rng.standard_normal(ne))


def precompute(program: AgentProgram, params: AdmmParams) -> FactorizedQhat:
    """Form and factor ``Q_i + G_i + rho sum_j E_ij' E_ij``.

    With the ``zero`` policy a failed factorization falls back to
    ``G_i = eps_shift (1 + max diag) I``.
    """
    E = program.E_stack
    base = program.Q + params.rho * (E.T @ E)
    nx = base.shape[0]

    def attempt(G):
        Qhat = base if G is None else base + np.diag(G)
        return Qhat, spd_factor(Qhat)

    G = None
    if params.g_policy == "explicit":
        G = np.asarray(params.g_diag[program.agent], dtype=float)
        if G.shape != (nx,) or np.any(G < 0):
            raise ValueError(f"agent {program.agent}: g_diag must be a nonnegative vector of length {nx}")
    elif params.g_policy == "shift":
        G = np.full(nx, params.eps_shift * (1.0 + float(np.max(np.diag(base), initial=0.0))))
    try:
        Qhat, L = attempt(G)
        return FactorizedQhat(Qhat, L, G, shifted=params.g_policy == "shift")
    except NotPositiveDefiniteError as exc:
        if params.g_policy != "zero":
            raise NumericalConfigurationError(f"agent {program.agent}: Qhat not positive definite: {exc}") from exc
    G = np.full(nx, params.eps_shift * (1.0 + float(np.max(np.diag(base), initial=0.0))))
    try:
        Qhat, L = attempt(G)
    except NotPositiveDefiniteError as exc:
        raise NumericalConfigurationError(
            f"agent {program.agent}: Qhat not positive definite even with shift {G[0]:.3e}: {exc}"
        ) from exc
    return FactorizedQhat(Qhat, L, G, shifted=True)


def x_update(state: AgentState, program: AgentProgram, fact: FactorizedQhat, rho: float) -> np.ndarray:
    qhat = program.q - program.E_stack.T @ (rho * (state.y + program.e_stack) + state.lam)
    if fact.G is not None:
        qhat = qhat - fact.G * state.x
    state.x_prev = state.x
    state.x = spd_solve_factored(fact.chol, -qhat)
    return state.x


def make_messages(state: AgentState, program: AgentProgram, rho: float) -> list[Message]:
    state.m = program.E_stack @ state.x - program.e_stack
    state.payload = state.m - state.lam / rho
    return [
        Message(program.agent, j, state.s + 1, state.payload[program.edge_slices[j]])
        for j in program.neighbors
    ]


def y_update(state: AgentState, program: AgentProgram, inbox: dict) -> np.ndarray:
    """Average own and received payloads; ``inbox`` maps sender -> Message."""
    y = np.empty_like(state.y)
    for j in program.neighbors:
        msg = inbox.get(j)
        sl = program.edge_slices[j]
        if msg is None:
            raise ProtocolError(f"agent {program.agent}: no message from {j} in round {state.s + 1}")
        if msg.round != state.s + 1 or msg.payload.shape != (sl.stop - sl.start,):
            raise ProtocolError(
                f"agent {program.agent}: bad message from {j} (round {msg.round}, "
                f"length {msg.payload.shape[0]}) in round {state.s + 1}"
            )
        y[sl] = 0.5 * (state.payload[sl] + msg.payload)
    state.y = y
    return y


def lambda_update(state: AgentState, rho: float) -> np.ndarray:
    state.lam = state.lam - rho * (state.m - state.y)
    state.s += 1
    return state.lam


def local_residuals(state: AgentState, program: AgentProgram) -> tuple[float, float]:
    """``(max_j ||m_ij - y_ij||_inf, ||x(s) - x(s-1)||_inf)``."""
    primal = float(np.max(np.abs(state.m - state.y), initial=0.0)) if state.m is not None else 0.0
    delta = float(np.max(np.abs(state.x - state.x_prev), initial=0.0)) if state.x_prev is not None else 0.0
    return primal, delta
