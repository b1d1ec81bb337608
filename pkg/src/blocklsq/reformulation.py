"""Compile a block problem into per-agent quadratic programs.

Each agent ``i`` keeps local copies ``z_l^(i)`` of every column part it
touches, stacked into ``zbar_i``, plus one virtual flow vector per coupled
row partition and incident edge inside that partition. The local cost is

    Psi_i(x) = 1/2 ||A_i zbar_i - a_i||^2
               + sum_eps w_eps/2 ||B_i,eps zbar_i + sum_j v_ij,eps - b_i,eps||^2

with ``w_eps`` the number of agents sharing row partition ``eps``. Neighbors
are tied together by affine edge maps ``E_ij x_i - e_ij`` that must agree
at both endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, GraphError
from .problem import BlockProblem, PartitionIndex, build_index, split_h, validate


class ConfigurationError(ValueError):
    """The problem cannot be compiled into well-posed local programs."""


@dataclass(frozen=True)
class AgentLayout:
    """Where each local variable sits inside ``x_i = [zbar_i, vbar_i]``."""

    agent: int
    owned_cols: tuple
    v_slots: tuple  # (eps, j) pairs, eps ascending then j ascending
    z_offsets: dict  # l -> (start, length)
    v_offsets: dict  # (eps, j) -> (start, length)
    z_dim: int
    x_dim: int

    def z_slice(self, l: int) -> slice:
        start, length = self.z_offsets[l]
        return slice(start, start + length)

    def v_slice(self, eps: int, j: int) -> slice:
        start, length = self.v_offsets[eps, j]
        return slice(start, start + length)


@dataclass(frozen=True)
class CoupledRow:
    B: np.ndarray  # m_eps x z_dim
    b: np.ndarray  # m_eps
    weight: int
    R: np.ndarray  # m_eps x x_dim, R x = B zbar + sum_j v_(i j, eps)


@dataclass(frozen=True)
class EdgeCoupling:
    P: np.ndarray
    E: np.ndarray
    e: np.ndarray
    blocks: tuple  # (label, row count) in stacking order

    @property
    def rows(self) -> int:
        return self.E.shape[0]


@dataclass(frozen=True)
class AgentProgram:
    """Everything agent ``i`` needs to run its iteration, and nothing more.

    ``E_stack``/``e_stack`` concatenate the couplings of ``neighbors`` (the
    neighbors with a nonempty coupling, ascending) and ``edge_slices`` maps
    each of them to its rows.
    """

    agent: int
    layout: AgentLayout
    A: np.ndarray
    a: np.ndarray
    coupled: dict  # eps -> CoupledRow
    couplings: dict  # j -> EdgeCoupling, every graph neighbor
    Q: np.ndarray
    q: np.ndarray
    cost_const: float
    neighbors: tuple = ()
    E_stack: np.ndarray = None
    e_stack: np.ndarray = None
    edge_slices: dict = field(default_factory=dict)

    def zbar(self, x: np.ndarray) -> np.ndarray:
        return x[: self.layout.z_dim]

    def cost(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.cost_const)

    def residual_cost(self, x: np.ndarray) -> float:
        """Same value as :meth:`cost`, evaluated from the residuals directly."""
        z = self.zbar(x)
        r = self.A @ z - self.a
        total = 0.5 * float(r @ r)
        for eps, row in self.coupled.items():
            share = row.B @ z - row.b
            for j in self.layout.v_slots:
                if j[0] == eps:
                    share = share + x[self.layout.v_slice(*j)]
            total += 0.5 * row.weight * float(share @ share)
        return total

    def share(self, x: np.ndarray, eps: int) -> np.ndarray:
        row = self.coupled[eps]
        return row.R @ x - row.b


def build_layouts(p: BlockProblem, idx: PartitionIndex, g: Graph) -> dict:
    layouts = {}
    for i in range(1, p.N + 1):
        owned = idx.owned_cols(i)
        if not owned:
            raise ConfigurationError(f"agent {i} owns no block and would have no variables")
        z_off, pos = {}, 0
        for l in owned:
            z_off[l] = (pos, p.col_dims[l - 1])
            pos += p.col_dims[l - 1]
        z_dim = pos
        slots, v_off = [], {}
        for eps in idx.coupled_of[i]:
            for j in g.neighbors(i):
                if j in idx.SR[eps]:
                    slots.append((eps, j))
                    v_off[eps, j] = (pos, p.row_dims[eps - 1])
                    pos += p.row_dims[eps - 1]
        layouts[i] = AgentLayout(i, owned, tuple(slots), z_off, v_off, z_dim, pos)
    return layouts


def build_P(p: BlockProblem, layouts: dict, g: Graph, i: int, j: int) -> np.ndarray:
    """Selector with ``P_ij zbar_i`` = the column parts shared by ``i`` and ``j``."""
    if not g.has_edge(i, j):
        raise GraphError(f"({i}, {j}) is not an edge")
    li, lj = layouts[i], layouts[j]
    shared = [l for l in li.owned_cols if l in lj.z_offsets]
    rows = sum(p.col_dims[l - 1] for l in shared)
    P = np.zeros((rows, li.z_dim))
    r = 0
    for l in shared:
        start, length = li.z_offsets[l]
        P[r:r + length, start:start + length] = np.eye(length)
        r += length
    return P


def _row_block(p: BlockProblem, layout: AgentLayout, k: int, i: int) -> np.ndarray:
    # Agent i's blocks of row k placed under the matching zbar_i columns.
    out = np.zeros((p.row_dims[k - 1], layout.z_dim))
    for l in layout.owned_cols:
        if p.owner.get((k, l)) == i:
            out[:, layout.z_slice(l)] = p.blocks[k, l]
    return out


def build_row_data(p: BlockProblem, idx: PartitionIndex, split: dict, layout: AgentLayout):
    """Stacked sole-owner data ``(A_i, a_i)`` and per coupled row ``(B, b, w)``."""
    i = layout.agent
    sole = idx.sole_rows(i)
    if sole:
        A = np.vstack([_row_block(p, layout, k, i) for k in sole])
        a = np.concatenate([np.asarray(p.h_parts[k], dtype=float) for k in sole])
    else:
        A = np.zeros((0, layout.z_dim))
        a = np.zeros(0)
    coupled = {}
    for eps in idx.coupled_of[i]:
        B = _row_block(p, layout, eps, i)
        R = np.zeros((B.shape[0], layout.x_dim))
        R[:, : layout.z_dim] = B
        for eps2, j in layout.v_slots:
            if eps2 == eps:
                R[:, layout.v_slice(eps, j)] += np.eye(B.shape[0])
        coupled[eps] = CoupledRow(B, np.array(split[i, eps], dtype=float), len(idx.SR[eps]), R)
    return A, a, coupled


def build_quadratic(layout: AgentLayout, A: np.ndarray, a: np.ndarray, coupled: dict):
    """``(Q, q, c)`` with ``Psi_i(x) = 1/2 x'Qx + q'x + c``."""
    nz, nx = layout.z_dim, layout.x_dim
    Q = np.zeros((nx, nx))
    q = np.zeros(nx)
    Q[:nz, :nz] = A.T @ A
    q[:nz] = -A.T @ a
    const = 0.5 * float(a @ a)
    for row in coupled.values():
        Q += row.weight * (row.R.T @ row.R)
        q -= row.weight * (row.R.T @ row.b)
        const += 0.5 * row.weight * float(row.b @ row.b)
    Q = 0.5 * (Q + Q.T)
    return Q, q, const


def sign(i: int, j: int) -> float:
    """Orientation of the virtual flow on edge ``(i, j)``: +1 at the smaller id."""
    return 1.0 if i < j else -1.0


def build_coupling(p, idx, g, layouts, coupled_i, i, j) -> EdgeCoupling:
    """Edge map ``m_ij(x_i) = E_ij x_i - e_ij``.

    Rows: the shared column copies, then for each coupled row partition both
    endpoints take part in, agent ``i``'s residual share followed by its
    signed flow on this edge.
    """
    layout = layouts[i]
    P = build_P(p, layouts, g, i, j)
    blocks = [("P", P.shape[0])]
    E_parts = [np.hstack([P, np.zeros((P.shape[0], layout.x_dim - layout.z_dim))])]
    e_parts = [np.zeros(P.shape[0])]
    common = [eps for eps in idx.coupled_of[i] if eps in idx.coupled_of[j]]
    for eps in common:
        row = coupled_i[eps]
        m_eps = row.B.shape[0]
        E_parts.append(row.R)
        e_parts.append(row.b)
        D = np.zeros((m_eps, layout.x_dim))
        D[:, layout.v_slice(eps, j)] = sign(i, j) * np.eye(m_eps)
        E_parts.append(D)
        e_parts.append(np.zeros(m_eps))
        blocks += [(f"u{eps}", m_eps), (f"v{eps}", m_eps)]
    E = np.vstack(E_parts)
    e = np.concatenate(e_parts)
    return EdgeCoupling(P, E, e, tuple(blocks))


@dataclass(frozen=True)
class CompiledProblem:
    problem: BlockProblem
    graph: Graph
    index: PartitionIndex
    split: dict
    layouts: dict
    programs: dict
    active_edges: tuple  # edges (i < j) whose coupling has at least one row

    @property
    def agents(self) -> range:
        return range(1, self.problem.N + 1)

    def zbar_of(self, z: np.ndarray, i: int) -> np.ndarray:
        """Agent ``i``'s slice of a global vector ``z``."""
        co = self.problem.col_offsets()
        return np.concatenate([z[co[l - 1]:co[l]] for l in self.layouts[i].owned_cols])

    def assemble_z(self, xs: dict) -> np.ndarray:
        """Global ``z`` read from the lowest-id holder of each column part."""
        parts = []
        for l in range(1, self.problem.L + 1):
            i = self.index.SC[l][0]
            parts.append(xs[i][self.layouts[i].z_slice(l)])
        return np.concatenate(parts)


def compile_problem(p: BlockProblem, g: Graph, check: bool = True) -> CompiledProblem:
    if check:
        rep = validate(p, g)
        if not rep.passed:
            raise ConfigurationError("; ".join(rep.errors) or "validation failed")
    idx = build_index(p)
    split = split_h(p, idx)
    layouts = build_layouts(p, idx, g)
    row_data = {i: build_row_data(p, idx, split, layouts[i]) for i in layouts}
    programs = {}
    active = set()
    for i, layout in layouts.items():
        A, a, coupled = row_data[i]
        Q, q, const = build_quadratic(layout, A, a, coupled)
        couplings = {j: build_coupling(p, idx, g, layouts, coupled, i, j) for j in g.neighbors(i)}
        nbrs = tuple(j for j in g.neighbors(i) if couplings[j].rows > 0)
        active.update((min(i, j), max(i, j)) for j in nbrs)
        slices, pos = {}, 0
        for j in nbrs:
            slices[j] = slice(pos, pos + couplings[j].rows)
            pos += couplings[j].rows
        E_stack = np.vstack([couplings[j].E for j in nbrs]) if nbrs else np.zeros((0, layout.x_dim))
        e_stack = np.concatenate([couplings[j].e for j in nbrs]) if nbrs else np.zeros(0)
        programs[i] = AgentProgram(
            i, layout, A, a, coupled, couplings, Q, q, const, nbrs, E_stack, e_stack, slices
        )
    for i, j in active:
        if programs[i].couplings[j].rows != programs[j].couplings[i].rows:
            raise ConfigurationError(f"edge ({i}, {j}) has mismatched coupling sizes")
    return CompiledProblem(p, g, idx, split, layouts, programs, tuple(sorted(active)))


def balance_virtual_flows(g: Graph, members, deficits: dict) -> dict:
    """Antisymmetric edge flows ``f`` with ``sum_j f[i, j] == deficits[i]``.

    Deficits must sum to zero. Flows are routed leaf-to-root along the BFS
    spanning tree of the subgraph induced by ``members``; every other edge
    carries zero. Returns ``{(i, j): f_ij}`` for both orientations of every
    induced edge.
    """
    members = tuple(sorted(members))
    order, parent = g.bfs_tree(members)
    subtotal = {i: np.array(deficits[i], dtype=float) for i in members}
    flows = {}
    for e in g.induced_subgraph(members).edges:
        zero = np.zeros_like(subtotal[e[0]])
        flows[e] = zero
        flows[e[1], e[0]] = zero.copy()
    for c in reversed(order[1:]):
        par = parent[c]
        flows[c, par] = subtotal[c].copy()
        flows[par, c] = -subtotal[c]
        subtotal[par] = subtotal[par] + subtotal[c]
    return flows


def feasible_point(cp: CompiledProblem, z: np.ndarray) -> dict:
    """Local states for a global ``z``: equal copies and balanced flows.

    The returned ``x_i`` satisfy every edge constraint, and their costs add
    up to ``1/2 ||H z - h||^2``.
    """
    xs = {}
    for i, layout in cp.layouts.items():
        x = np.zeros(layout.x_dim)
        x[: layout.z_dim] = cp.zbar_of(z, i)
        xs[i] = x
    for eps in cp.index.coupled:
        members = cp.index.SR[eps]
        base = {i: cp.programs[i].coupled[eps].B @ cp.zbar_of(z, i) - cp.programs[i].coupled[eps].b for i in members}
        target = sum(base.values()) / len(members)
        flows = balance_virtual_flows(cp.graph, members, {i: target - base[i] for i in members})
        for i in members:
            for eps2, j in cp.layouts[i].v_slots:
                if eps2 == eps:
                    xs[i][cp.layouts[i].v_slice(eps, j)] = flows[i, j]
    return xs
