"""Block-partitioned linear system ``H z = h`` distributed over agents.

``H`` is cut into ``K`` row partitions and ``L`` column partitions. Each
present block ``H[k, l]`` is known to exactly one agent; absent blocks are
zero and have owner ``0``. Row partitions, column partitions and agents are
all 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .graph import Graph


class ProblemError(ValueError):
    """Base class for ill-formed problems."""


class StructureError(ProblemError):
    """Block shapes inconsistent with the partition dimensions."""


class OwnershipError(ProblemError):
    """Owner id outside ``1..N`` or owner map not aligned with the blocks."""


class SplitError(ProblemError):
    """Per-agent parts of ``h_k`` do not add up to ``h_k``."""


class MembershipError(SplitError):
    """Explicit part given to an agent that owns no block of the row."""


SPLIT_MODES = ("owner", "equal", "explicit")


@dataclass(frozen=True)
class SplitPolicy:
    """How ``h_k`` is divided among the agents of row partition ``k``.

    ``owner`` hands all of ``h_k`` to the lowest-id agent, ``equal`` divides
    it evenly, ``explicit`` uses ``parts`` (agent id -> vector) verbatim.
    """

    mode: str = "equal"
    parts: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise SplitError(f"unknown split mode {self.mode!r}; expected one of {SPLIT_MODES}")
        if self.mode == "explicit":
            if not self.parts:
                raise SplitError("explicit split needs parts")
            parts = {int(i): _frozen(v) for i, v in self.parts.items()}
            object.__setattr__(self, "parts", parts)
        elif self.parts is not None:
            raise SplitError(f"split mode {self.mode!r} takes no parts")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BlockProblem:
    """Partitioned system together with the block ownership map."""

    row_dims: tuple
    col_dims: tuple
    n_agents: int
    blocks: Mapping[tuple[int, int], np.ndarray]
    owner: Mapping[tuple[int, int], int]
    h_parts: Mapping[int, np.ndarray]
    h_split: Mapping[int, SplitPolicy] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "row_dims", tuple(int(d) for d in self.row_dims))
        object.__setattr__(self, "col_dims", tuple(int(d) for d in self.col_dims))
        object.__setattr__(self, "n_agents", int(self.n_agents))
        object.__setattr__(self, "blocks", {(int(k), int(l)): _frozen(b) for (k, l), b in self.blocks.items()})
        object.__setattr__(self, "owner", {(int(k), int(l)): int(i) for (k, l), i in self.owner.items()})
        object.__setattr__(self, "h_parts", {int(k): _frozen(v) for k, v in self.h_parts.items()})
        split = {int(k): v for k, v in self.h_split.items()}
        for k in range(1, self.K + 1):
            split.setdefault(k, SplitPolicy())
        object.__setattr__(self, "h_split", split)
        self.check_structure()

    @property
    def K(self) -> int:
        return len(self.row_dims)

    @property
    def L(self) -> int:
        return len(self.col_dims)

    @property
    def N(self) -> int:
        return self.n_agents

    @property
    def m(self) -> int:
        return sum(self.row_dims)

    @property
    def n(self) -> int:
        return sum(self.col_dims)

    def row_offsets(self) -> list[int]:
        return [0, *np.cumsum(self.row_dims).tolist()]

    def col_offsets(self) -> list[int]:
        return [0, *np.cumsum(self.col_dims).tolist()]

    def check_structure(self) -> None:
        """Raise if shapes, owners or ``h`` disagree with the partition."""
        if self.K < 1 or self.L < 1:
            raise StructureError("need at least one row and one column partition")
        for name, dims in (("row_dims", self.row_dims), ("col_dims", self.col_dims)):
            for idx, d in enumerate(dims, start=1):
                if d < 1:
                    raise StructureError(f"{name}[{idx}] = {d} must be positive")
        if self.n_agents < 1:
            raise OwnershipError("need at least one agent")
        for (k, l), b in self.blocks.items():
            if not (1 <= k <= self.K and 1 <= l <= self.L):
                raise StructureError(f"block ({k},{l}) outside the {self.K}x{self.L} partition grid")
            if b.shape != (self.row_dims[k - 1], self.col_dims[l - 1]):
                raise StructureError(
                    f"block ({k},{l}) has shape {b.shape}, expected "
                    f"({self.row_dims[k - 1]}, {self.col_dims[l - 1]})"
                )
            if not np.all(np.isfinite(b)):
                raise StructureError(f"block ({k},{l}) has non-finite entries")
        if set(self.owner) != set(self.blocks):
            extra = sorted(set(self.owner) ^ set(self.blocks))
            raise OwnershipError(f"owner map must cover exactly the present blocks; mismatch at {extra}")
        for kl, i in self.owner.items():
            if not 1 <= i <= self.n_agents:
                raise OwnershipError(f"block {kl} owned by {i}, outside 1..{self.n_agents}")
        for k in range(1, self.K + 1):
            if k not in self.h_parts:
                raise StructureError(f"missing h for row partition {k}")
            if self.h_parts[k].shape != (self.row_dims[k - 1],):
                raise StructureError(
                    f"h[{k}] has shape {self.h_parts[k].shape}, expected ({self.row_dims[k - 1]},)"
                )
        for k in self.h_parts:
            if not 1 <= k <= self.K:
                raise StructureError(f"h given for unknown row partition {k}")
        for k, pol in self.h_split.items():
            if not 1 <= k <= self.K:
                raise StructureError(f"split policy given for unknown row partition {k}")
            if pol.mode == "explicit":
                for i, part in pol.parts.items():
                    if part.shape != (self.row_dims[k - 1],):
                        raise StructureError(f"explicit part of h[{k}] for agent {i} has shape {part.shape}")

    @classmethod
    def from_dense(cls, H, h, row_dims, col_dims, owners, n_agents=None, h_split=None) -> BlockProblem:
        """Cut a dense system along the given partition and owner grid.

        ``owners`` is a ``K x L`` integer array; ``0`` marks an absent block.
        """
        H = np.asarray(H, dtype=float)
        h = np.asarray(h, dtype=float)
        owners = np.asarray(owners, dtype=int)
        ro = np.concatenate([[0], np.cumsum(row_dims)])
        co = np.concatenate([[0], np.cumsum(col_dims)])
        if H.shape != (ro[-1], co[-1]):
            raise StructureError(f"H has shape {H.shape}, partition implies ({ro[-1]}, {co[-1]})")
        if owners.shape != (len(row_dims), len(col_dims)):
            raise StructureError(f"owner grid has shape {owners.shape}")
        blocks, owner = {}, {}
        for k in range(len(row_dims)):
            for l in range(len(col_dims)):
                if owners[k, l]:
                    blocks[k + 1, l + 1] = H[ro[k]:ro[k + 1], co[l]:co[l + 1]]
                    owner[k + 1, l + 1] = int(owners[k, l])
        h_parts = {k + 1: h[ro[k]:ro[k + 1]] for k in range(len(row_dims))}
        if n_agents is None:
            n_agents = int(owners.max())
        return cls(row_dims, col_dims, n_agents, blocks, owner, h_parts, h_split or {})


@dataclass(frozen=True)
class PartitionIndex:
    """Who knows what: per-partition agent lists and the derived sets.

    ``R[k]`` and ``C[l]`` are the raw owner lists (0 for absent blocks),
    ``SR``/``SC`` their deduplicated ascending agent sets, ``B[k, i]`` the
    blocks of row ``k`` held by agent ``i``, ``coupled`` the row partitions
    shared by two or more agents and ``coupled_of[i]`` those agent ``i``
    takes part in.
    """

    R: dict
    C: dict
    SR: dict
    SC: dict
    B: dict
    coupled: tuple
    coupled_of: dict

    def sole_rows(self, i: int) -> tuple[int, ...]:
        """Row partitions whose blocks all belong to agent ``i``."""
        return tuple(k for k in sorted(self.SR) if self.SR[k] == (i,))

    def owned_cols(self, i: int) -> tuple[int, ...]:
        return tuple(l for l in sorted(self.SC) if i in self.SC[l])


def build_index(p: BlockProblem) -> PartitionIndex:
    p.check_structure()
    R = {k: tuple(p.owner.get((k, l), 0) for l in range(1, p.L + 1)) for k in range(1, p.K + 1)}
    C = {l: tuple(p.owner.get((k, l), 0) for k in range(1, p.K + 1)) for l in range(1, p.L + 1)}
    SR = {k: tuple(sorted(set(R[k]) - {0})) for k in R}
    SC = {l: tuple(sorted(set(C[l]) - {0})) for l in C}
    B = {
        (k, i): tuple((k, l) for l in range(1, p.L + 1) if p.owner.get((k, l)) == i)
        for k in range(1, p.K + 1)
        for i in range(1, p.N + 1)
    }
    coupled = tuple(k for k in sorted(SR) if len(SR[k]) >= 2)
    coupled_of = {i: tuple(k for k in coupled if i in SR[k]) for i in range(1, p.N + 1)}
    return PartitionIndex(R, C, SR, SC, B, coupled, coupled_of)


def _exact_sum(parts: list[np.ndarray]) -> np.ndarray:
    # Correctly rounded elementwise sum, independent of summation order.
    return np.array([math.fsum(col) for col in zip(*parts)], dtype=float)


def _equal_split(hk: np.ndarray, count: int) -> list[np.ndarray]:
    share = hk / count
    rest = [share.copy() for _ in range(count - 1)]
    first = np.array([math.fsum([x] + [-s] * (count - 1)) for x, s in zip(hk, share)])
    # Nudge the residual holder until the correctly rounded total is h_k.
    for pos in range(hk.size):
        for _ in range(64):
            total = math.fsum([first[pos]] + [r[pos] for r in rest])
            if total == hk[pos]:
                break
            first[pos] = np.nextafter(first[pos], first[pos] + (hk[pos] - total))
    return [first, *rest]


def split_h(p: BlockProblem, idx: PartitionIndex | None = None, rtol: float = 1e-12) -> dict:
    """Per-agent parts ``h_{i,k}`` keyed by ``(i, k)``.

    The parts satisfy ``fsum_i h_{i,k} == h_k``: exactly for the ``owner``
    and ``equal`` policies, and within ``rtol * max(1, |h_k|)`` for
    user-supplied explicit parts.
    """
    idx = idx or build_index(p)
    out = {}
    for k in range(1, p.K + 1):
        agents = idx.SR[k]
        hk = np.asarray(p.h_parts[k], dtype=float)
        if not agents:
            continue
        pol = p.h_split[k]
        if len(agents) == 1:
            out[agents[0], k] = hk.copy()
            continue
        if pol.mode == "owner":
            parts = [hk.copy()] + [np.zeros_like(hk) for _ in agents[1:]]
        elif pol.mode == "equal":
            parts = _equal_split(hk, len(agents))
        else:
            unknown = sorted(set(pol.parts) - set(agents))
            if unknown:
                raise MembershipError(
                    f"row partition {k}: explicit parts for agents {unknown} outside S(R_{k}) = {list(agents)}"
                )
            parts = [np.array(pol.parts.get(i, np.zeros_like(hk)), dtype=float) for i in agents]
            total = _exact_sum(parts)
            tol = rtol * np.maximum(1.0, np.abs(hk))
            if np.any(np.abs(total - hk) > tol):
                raise SplitError(
                    f"row partition {k}: explicit parts sum to {total.tolist()}, expected {hk.tolist()}"
                )
        for i, part in zip(agents, parts):
            out[i, k] = part
    return out


def assemble_dense(p: BlockProblem) -> tuple[np.ndarray, np.ndarray]:
    p.check_structure()
    ro, co = p.row_offsets(), p.col_offsets()
    H = np.zeros((p.m, p.n))
    for (k, l), b in p.blocks.items():
        H[ro[k - 1]:ro[k], co[l - 1]:co[l]] = b
    h = np.concatenate([p.h_parts[k] for k in range(1, p.K + 1)])
    return H, h


@dataclass
class ValidationReport:
    col_connected: dict = field(default_factory=dict)
    row_connected: dict = field(default_factory=dict)
    graph_connected: bool = False
    split_ok: bool = False
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (
            not self.errors
            and self.graph_connected
            and self.split_ok
            and all(self.col_connected.values())
            and all(self.row_connected.values())
        )

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "graph_connected": self.graph_connected,
            "split_ok": self.split_ok,
            "col_connected": {str(l): v for l, v in self.col_connected.items()},
            "row_connected": {str(k): v for k, v in self.row_connected.items()},
            "errors": list(self.errors),
            "warnings": list(self.warnings),
        }


def validate(p: BlockProblem, g: Graph) -> ValidationReport:
    """Check the connectivity requirements and the ``h`` split; never raises."""
    rep = ValidationReport()
    try:
        idx = build_index(p)
    except ProblemError as exc:
        rep.errors.append(str(exc))
        return rep
    if g.node_count != p.N or g.nodes != frozenset(range(1, p.N + 1)):
        rep.errors.append(f"graph has {g.node_count} nodes but the problem has {p.N} agents")
        return rep
    rep.graph_connected = g.is_connected()
    if not rep.graph_connected:
        rep.errors.append("communication graph is disconnected")
    for l in range(1, p.L + 1):
        if not idx.SC[l]:
            rep.col_connected[l] = False
            rep.errors.append(f"column partition {l} has no present block, so no agent holds z_{l}")
            continue
        rep.col_connected[l] = g.is_connected(idx.SC[l])
        if not rep.col_connected[l]:
            rep.errors.append(f"induced subgraph G^{l} on agents {list(idx.SC[l])} is disconnected")
    for k in range(1, p.K + 1):
        if not idx.SR[k]:
            rep.row_connected[k] = False
            rep.errors.append(f"row partition {k} has no present block, so no agent holds h_{k}")
            continue
        rep.row_connected[k] = g.is_connected(idx.SR[k])
        if not rep.row_connected[k]:
            rep.errors.append(f"induced subgraph G_{k} on agents {list(idx.SR[k])} is disconnected")
    seen = {}
    for k in range(1, p.K + 1):
        if idx.R[k] in seen:
            rep.warnings.append(
                f"row partitions {seen[idx.R[k]]} and {k} have the same agent list {list(idx.R[k])}"
            )
        else:
            seen[idx.R[k]] = k
    idle = [i for i in range(1, p.N + 1) if not idx.owned_cols(i)]
    if idle:
        rep.warnings.append(f"agents {idle} own no block; compilation rejects agents without variables")
    try:
        split_h(p, idx)
        rep.split_ok = True
    except SplitError as exc:
        rep.errors.append(str(exc))
    return rep
