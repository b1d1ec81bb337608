"""Synchronous round-based execution of the distributed iteration.

A round is: every agent updates ``x`` and emits its messages, the
coordinator delivers them, every agent updates ``y`` and ``lambda``. Agents
may run on a thread pool inside each phase; since an agent reads only its
own state and its inbox, the result does not depend on the worker count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import admm
from .admm import AdmmParams, AgentState
from .oracle import LsqSolution
from .reformulation import CompiledProblem

DIVERGENCE_LIMIT = 1e12


class DimensionCapError(ValueError):
    """State too large for the dense iteration-map diagnostic."""


class InsufficientDataError(ValueError):
    """Not enough informative rounds to fit a convergence rate."""


def default_workers() -> int:
    env = os.environ.get("BLOCKLSQ_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass
class RoundMetrics:
    s: int
    primal_inf: float
    consensus_inf: float
    delta_w: float
    cost: float
    cost_gap: float | None
    err_x: float | None
    messages: int
    elapsed_ms: float


@dataclass
class SystemState:
    w: np.ndarray
    s: int


class Network:
    """All agents of a compiled problem plus the in-memory message exchange."""

    def __init__(self, cp: CompiledProblem, params: AdmmParams, init=None, workers: int | None = None):
        self.cp = cp
        self.params = params
        self.programs = cp.programs
        self.agents = tuple(cp.agents)
        self.facts = {i: admm.precompute(self.programs[i], params) for i in self.agents}
        if isinstance(init, np.random.Generator):
            self.states = {i: admm.initial_state(self.programs[i], init) for i in self.agents}
        elif isinstance(init, dict):
            self.states = init
        else:
            self.states = {i: admm.initial_state(self.programs[i]) for i in self.agents}
        self.workers = max(1, workers if workers is not None else default_workers())
        self.agent_seconds = {i: 0.0 for i in self.agents}
        self.messages_last_round = 0
        self.s = 0
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._consensus_pairs = []
        for i, j in cp.graph.sorted_edges():
            ci, cj = self.programs[i].couplings[j], self.programs[j].couplings[i]
            if ci.P.shape[0]:
                self._consensus_pairs.append((i, j, ci.P, cj.P))
        self._layout = self._state_layout()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def _phase_send(self, i):
        t0 = time.perf_counter()
        st, prog = self.states[i], self.programs[i]
        admm.x_update(st, prog, self.facts[i], self.params.rho)
        msgs = admm.make_messages(st, prog, self.params.rho)
        self.agent_seconds[i] += time.perf_counter() - t0
        return msgs

    def _phase_receive(self, i, inbox):
        t0 = time.perf_counter()
        st, prog = self.states[i], self.programs[i]
        admm.y_update(st, prog, inbox)
        admm.lambda_update(st, self.params.rho)
        self.agent_seconds[i] += time.perf_counter() - t0

    def step(self) -> None:
        outgoing = self._map(self._phase_send, self.agents)
        inboxes = {i: {} for i in self.agents}
        sent = 0
        for msgs in outgoing:
            for msg in msgs:
                inboxes[msg.to][msg.sender] = msg
                sent += 1
        self._map(lambda i: self._phase_receive(i, inboxes[i]), self.agents)
        self.messages_last_round = sent
        self.s += 1

    # -- stacked state ---------------------------------------------------
    def _state_layout(self):
        layout, pos = [], 0
        for i in self.agents:
            n = self.programs[i].layout.x_dim
            layout.append(("x", i, None, slice(pos, pos + n)))
            pos += n
        for i, j in self.cp.active_edges:
            for a, b in ((i, j), (j, i)):
                n = self.programs[a].couplings[b].rows
                layout.append(("y", a, b, slice(pos, pos + n)))
                pos += n
                layout.append(("lam", a, b, slice(pos, pos + n)))
                pos += n
        self.state_dim = pos
        return layout

    def pack(self) -> np.ndarray:
        w = np.empty(self.state_dim)
        for kind, i, j, sl in self._layout:
            st = self.states[i]
            if kind == "x":
                w[sl] = st.x
            else:
                w[sl] = getattr(st, kind)[self.programs[i].edge_slices[j]]
        return w

    def unpack(self, w: np.ndarray) -> None:
        for kind, i, j, sl in self._layout:
            st = self.states[i]
            if kind == "x":
                st.x = np.array(w[sl])
            else:
                arr = getattr(st, kind).copy()
                arr[self.programs[i].edge_slices[j]] = w[sl]
                setattr(st, kind, arr)

    # -- observer-side diagnostics ---------------------------------------
    def primal_inf(self) -> float:
        return max((admm.local_residuals(self.states[i], self.programs[i])[0] for i in self.agents), default=0.0)

    def consensus_inf(self) -> float:
        worst = 0.0
        for i, j, Pi, Pj in self._consensus_pairs:
            zi = self.programs[i].zbar(self.states[i].x)
            zj = self.programs[j].zbar(self.states[j].x)
            worst = max(worst, float(np.max(np.abs(Pi @ zi - Pj @ zj))))
        return worst

    def cost(self) -> float:
        return math.fsum(self.programs[i].cost(self.states[i].x) for i in self.agents)

    def zbars(self) -> dict:
        return {i: self.programs[i].zbar(self.states[i].x).copy() for i in self.agents}

    def flow_antisymmetry_inf(self) -> float:
        worst = 0.0
        for eps in self.cp.index.coupled:
            for i, j in self.cp.graph.induced_subgraph(self.cp.index.SR[eps]).edges:
                vi = self.states[i].x[self.cp.layouts[i].v_slice(eps, j)]
                vj = self.states[j].x[self.cp.layouts[j].v_slice(eps, i)]
                worst = max(worst, float(np.max(np.abs(vi + vj))))
        return worst


@dataclass
class RunResult:
    state: SystemState
    metrics: list
    reason: str
    rounds: int
    agent_seconds: dict
    network: Network = field(repr=False)
    final: RoundMetrics | None = None


def run(
    cp: CompiledProblem,
    params: AdmmParams,
    oracle: LsqSolution | None = None,
    init=None,
    hooks: Sequence[Callable[[Network], None]] = (),
    decimation: int = 1,
    workers: int | None = None,
    min_iters: int = 1,
) -> RunResult:
    """Iterate until ``primal_inf <= tol_primal`` and ``delta_w <= tol_delta``.

    Termination reasons: ``converged``, ``max_iters``, ``diverged`` (the
    state change exceeded ``DIVERGENCE_LIMIT`` or became non-finite).
    """
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    net = Network(cp, params, init=init, workers=workers)
    zstar = None
    if oracle is not None and oracle.unique:
        zstar = {i: cp.zbar_of(oracle.z_star, i) for i in cp.agents}
    metrics = []
    t0 = time.perf_counter()
    w_prev = net.pack()
    reason = "max_iters"
    last = None
    try:
        while net.s < params.max_iters:
            net.step()
            w = net.pack()
            delta = float(np.max(np.abs(w - w_prev), initial=0.0))
            w_prev = w
            for hook in hooks:
                hook(net)
            primal = net.primal_inf()
            if not math.isfinite(delta) or delta > DIVERGENCE_LIMIT:
                reason = "diverged"
            elif net.s >= min_iters and primal <= params.tol_primal and delta <= params.tol_delta:
                reason = "converged"
            done = reason != "max_iters" or net.s >= params.max_iters
            if net.s % decimation == 0 or done:
                cost = net.cost()
                err = None
                if zstar is not None:
                    err = max(float(np.max(np.abs(net.programs[i].zbar(net.states[i].x) - zstar[i]), initial=0.0))
                              for i in cp.agents)
                last = RoundMetrics(
                    s=net.s,
                    primal_inf=primal,
                    consensus_inf=net.consensus_inf(),
                    delta_w=delta,
                    cost=cost,
                    cost_gap=abs(cost - oracle.psi_opt) if oracle is not None else None,
                    err_x=err,
                    messages=net.messages_last_round,
                    elapsed_ms=1e3 * (time.perf_counter() - t0),
                )
                metrics.append(last)
            if reason != "max_iters":
                break
    finally:
        net.close()
    return RunResult(SystemState(net.pack(), net.s), metrics, reason, net.s, dict(net.agent_seconds), net, last)


@dataclass
class IterationLinearization:
    M: np.ndarray
    m_vec: np.ndarray
    eigenvalues: np.ndarray
    roundmap: Callable = field(repr=False)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues), initial=0.0))

    def affinity_error(self, w: np.ndarray) -> float:
        return float(np.max(np.abs(self.roundmap(w) - (self.M @ w + self.m_vec)), initial=0.0))


def linearize_iteration(cp: CompiledProblem, params: AdmmParams, cap: int = 400) -> IterationLinearization:
    """Materialize the affine round map ``w -> M w + m`` column by column."""
    net = Network(cp, params, workers=1)
    n = net.state_dim
    if n > cap:
        raise DimensionCapError(f"state dimension {n} exceeds cap {cap}")

    def roundmap(w):
        net.unpack(np.asarray(w, dtype=float))
        net.step()
        return net.pack()

    m_vec = roundmap(np.zeros(n))
    M = np.empty((n, n))
    basis = np.zeros(n)
    for c in range(n):
        basis[c] = 1.0
        M[:, c] = roundmap(basis) - m_vec
        basis[c] = 0.0
    return IterationLinearization(M, m_vec, np.linalg.eigvals(M), roundmap)


def spectral_report(lin: IterationLinearization, tol: float = 1e-8, seed: int = 0, power_steps: int = 2000) -> dict:
    """Check that the spectrum sits in the closed unit disk with only 1 on its boundary.

    Eigenvalue 1 must behave semisimply: powers of ``M`` applied to random
    vectors stay bounded instead of growing linearly.
    """
    ev = lin.eigenvalues
    mod = np.abs(ev)
    near_circle = ev[mod > 1 - tol]
    inside = bool(np.all(mod <= 1 + tol))
    only_one = bool(np.all(np.abs(near_circle - 1) <= tol))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(lin.M.shape[0])
    norms = []
    for k in range(1, power_steps + 1):
        v = lin.M @ v
        if k in (power_steps // 2, power_steps):
            norms.append(float(np.linalg.norm(v)))
    bounded = bool(np.all(np.isfinite(norms)) and norms[1] <= 1.5 * norms[0] + 1e-12)
    inner = mod[mod <= 1 - tol]
    return {
        "dimension": int(lin.M.shape[0]),
        "spectral_radius": float(mod.max(initial=0.0)),
        "unit_eigenvalues": int(near_circle.size),
        "max_inner_modulus": float(inner.max(initial=0.0)),
        "inside_unit_disk": inside,
        "boundary_only_at_one": only_one,
        "powers_bounded": bounded,
        "passed": inside and only_one and bounded,
    }


@dataclass
class RateFit:
    rate: float
    correlation: float
    slope: float
    decades: float
    points: int
    stalled: bool


def fit_rate(metrics: Sequence[RoundMetrics], floor_rel: float = 1e-12, min_points: int = 50) -> RateFit:
    """Geometric rate of ``delta_w`` from a log-linear fit over the tail.

    Rounds after ``delta_w`` first drops to ``floor_rel * max(delta_w)``
    are rounding noise and are discarded; the fit uses the last half of
    what remains.
    """
    s = np.array([m.s for m in metrics], dtype=float)
    d = np.array([m.delta_w for m in metrics], dtype=float)
    if d.size == 0:
        raise InsufficientDataError("no metrics recorded")
    floor = floor_rel * float(np.max(d))
    below = np.nonzero(d <= floor)[0]
    cut = int(below[0]) if below.size else d.size
    s, d = s[:cut], d[:cut]
    if d.size < min_points:
        raise InsufficientDataError(f"only {d.size} rounds above the floor; need {min_points}")
    decades = float(np.log10(d.max()) - np.log10(d.min()))
    half = d.size // 2
    st, lt = s[half:], np.log(d[half:])
    slope, _ = np.polyfit(st, lt, 1)
    if np.std(lt) == 0.0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(st, lt)[0, 1])
    rate = float(np.exp(slope))
    return RateFit(rate, corr, float(slope), decades, int(d.size), stalled=bool(rate >= 1 - 1e-9))
