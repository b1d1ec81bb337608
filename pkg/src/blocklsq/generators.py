"""Test instances: the 24-agent grid setup, the 5-agent row-split systems and
the 6x4 block example with its ownership pattern.

Random entries are drawn from ``numpy.random.default_rng(seed)``, uniform on
``[-1, 1]``, in the order documented on each generator.
"""

from __future__ import annotations

import math

import numpy as np

from .graph import Graph, grid_graph
from .problem import BlockProblem, SplitPolicy

FIG3_EDGES = ((1, 2), (1, 3), (2, 4), (3, 4), (2, 5), (3, 5))

A1 = np.array([
    [1, 2, 1, 1],
    [2, -1, -1, 1],
    [1, -2, 4, -1],
    [-1, -0.6, 0.4, 1.8],
    [2, 2, -2, 1],
], dtype=float)
A2 = np.array([
    [1, 2, 1, 1],
    [1, 1.4, -1.6, 2.8],
    [3, 3.0, -3.6, 3.8],
    [-1, -0.6, 0.4, 1.8],
    [2, 2, -2, 1],
], dtype=float)
B_VEC = np.array([10, 20, 15, 17, 11], dtype=float)

# (row, col) -> agent for the 6x4 example.
APPENDIX_OWNERS = {
    (1, 1): 1, (1, 3): 1,
    (2, 1): 2, (4, 1): 2,
    (3, 2): 3, (3, 3): 3, (4, 3): 3,
    (2, 4): 4, (4, 4): 4,
    (5, 1): 5, (5, 3): 5, (6, 1): 5, (6, 2): 5,
}


def fig3_graph() -> Graph:
    return Graph.from_edges(5, FIG3_EDGES)


def gen_fig3(which: int = 1, a2_entry: float = 3.0) -> tuple[BlockProblem, Graph]:
    """Five agents, agent ``i`` knows row ``i`` of ``A`` and ``b_i``; one
    column partition of width 4 held by everyone.

    ``a2_entry`` overrides entry (3, 2) of the second system, printed as
    ``3.``; with 3.4 row 3 equals row 2 plus row 5 and the system becomes
    rank deficient (rank 3) and inconsistent.
    """
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which}")
    A = A1
    if which == 2:
        A = A2.copy()
        A[2, 1] = a2_entry
    blocks = {(i, 1): A[i - 1:i, :] for i in range(1, 6)}
    owner = {(i, 1): i for i in range(1, 6)}
    h = {i: B_VEC[i - 1:i] for i in range(1, 6)}
    return BlockProblem((1,) * 5, (4,), 5, blocks, owner, h), fig3_graph()


def gen_grid(rows: int = 4, cols: int = 6, n_local: int = 20, m_coupled: int = 5,
             n_shared: int | None = None, seed: int = 0) -> tuple[BlockProblem, Graph]:
    """Grid of agents, each with ``n_local`` local unknowns.

    Row partition ``i`` (height ``n_local``) is agent ``i``'s own data
    ``A_i``/``a_i``; row partition ``N + 1`` (height ``m_coupled``) is shared
    by all agents, each contributing ``[0 I]`` on its last ``m_coupled``
    unknowns and a random part of the right-hand side. The first
    ``n_shared`` unknowns (column partition 1) are common to every agent;
    agent ``i``'s remaining unknowns form column partition ``i + 1``.

    Draw order, per agent ascending: ``A_i`` row-major, ``a_i``, the agent's
    part of the coupled right-hand side.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if n_shared is None:
        n_shared = min(5, n_local - m_coupled)
    if m_coupled < 1 or n_shared < 0 or n_shared + m_coupled > n_local:
        raise ValueError(
            f"need m_coupled >= 1 and n_shared + m_coupled <= n_local "
            f"(got n_shared={n_shared}, m_coupled={m_coupled}, n_local={n_local})"
        )
    rng = np.random.default_rng(seed)
    N = rows * cols
    n_priv = n_local - n_shared
    first_priv = 2 if n_shared else 1
    col_dims = ([n_shared] if n_shared else []) + [n_priv] * N
    row_dims = [n_local] * N + [m_coupled]
    eps = N + 1
    blocks, owner, h, parts = {}, {}, {}, {}
    coupling = np.hstack([np.zeros((m_coupled, n_priv - m_coupled)), np.eye(m_coupled)])
    for i in range(1, N + 1):
        A = rng.uniform(-1, 1, (n_local, n_local))
        a = rng.uniform(-1, 1, n_local)
        parts[i] = rng.uniform(-1, 1, m_coupled)
        priv = first_priv + i - 1
        if n_shared:
            blocks[i, 1] = A[:, :n_shared]
            owner[i, 1] = i
        blocks[i, priv] = A[:, n_shared:]
        owner[i, priv] = i
        blocks[eps, priv] = coupling
        owner[eps, priv] = i
        h[i] = a
    h[eps] = np.array([math.fsum(p[r] for p in parts.values()) for r in range(m_coupled)])
    split = {eps: SplitPolicy("explicit", parts)} if N > 1 else {}
    p = BlockProblem(row_dims, col_dims, N, blocks, owner, h, split)
    return p, grid_graph(rows, cols)


def gen_appendixA(row_dims=(2,) * 6, col_dims=(2,) * 4, seed: int = 0) -> tuple[BlockProblem, Graph]:
    """The 6x4 block example over the 5-agent graph, with random values.

    Draw order: blocks in ascending ``(row, col)``, row-major entries; then
    ``h_k`` for ascending ``k``, where coupled rows draw one part per agent
    (ascending id) and ``h_k`` is their exact sum.
    """
    row_dims, col_dims = tuple(row_dims), tuple(col_dims)
    if len(row_dims) != 6 or len(col_dims) != 4:
        raise ValueError("the example has 6 row and 4 column partitions")
    rng = np.random.default_rng(seed)
    blocks = {}
    for k, l in sorted(APPENDIX_OWNERS):
        blocks[k, l] = rng.uniform(-1, 1, (row_dims[k - 1], col_dims[l - 1]))
    h, split = {}, {}
    for k in range(1, 7):
        agents = sorted({i for (kk, _), i in APPENDIX_OWNERS.items() if kk == k})
        if len(agents) == 1:
            h[k] = rng.uniform(-1, 1, row_dims[k - 1])
        else:
            parts = {i: rng.uniform(-1, 1, row_dims[k - 1]) for i in agents}
            h[k] = np.array([math.fsum(p[r] for p in parts.values()) for r in range(row_dims[k - 1])])
            split[k] = SplitPolicy("explicit", parts)
    p = BlockProblem(row_dims, col_dims, 5, blocks, dict(APPENDIX_OWNERS), h, split)
    return p, fig3_graph()


GENERATORS = {"grid": gen_grid, "fig3": gen_fig3, "appendixA": gen_appendixA}
