"""JSON problem files.

Layout::

    {
      "row_dims": [m_1, ...], "col_dims": [n_1, ...], "agents": N,
      "blocks": [{"row": k, "col": l, "owner": i, "values": [[...], ...]}, ...],
      "h": [{"row": k, "values": [...],
             "split": {"mode": "owner" | "equal" | "explicit",
                       "parts": [{"agent": i, "values": [...]}, ...]}}, ...],
      "graph": {"edges": [[i, j], ...]}
    }

``split`` is optional (default ``equal``); ``parts`` only goes with
``explicit``. Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError
from .problem import BlockProblem, ProblemError, SplitPolicy


class ProblemFileError(ProblemError):
    """Malformed problem file; the message starts with the offending field."""


def _keys(obj, where: str, required: set, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise ProblemFileError(f"{where}: expected an object")
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise ProblemFileError(f"{where}: unknown field(s) {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise ProblemFileError(f"{where}: missing field(s) {missing}")


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProblemFileError(f"{where}: expected an integer, got {v!r}")
    return v


def _array(v, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{where}: not a numeric array ({exc})") from exc
    if arr.ndim != ndim:
        raise ProblemFileError(f"{where}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemFileError(f"{where}: non-finite value")
    return arr


def problem_from_dict(data) -> tuple[BlockProblem, Graph]:
    _keys(data, "problem", {"row_dims", "col_dims", "agents", "blocks", "h", "graph"})
    for name in ("row_dims", "col_dims"):
        if not isinstance(data[name], list):
            raise ProblemFileError(f"{name}: expected a list")
    row_dims = [_int(d, f"row_dims[{t}]") for t, d in enumerate(data["row_dims"])]
    col_dims = [_int(d, f"col_dims[{t}]") for t, d in enumerate(data["col_dims"])]
    n_agents = _int(data["agents"], "agents")
    blocks, owner = {}, {}
    if not isinstance(data["blocks"], list):
        raise ProblemFileError("blocks: expected a list")
    for t, b in enumerate(data["blocks"]):
        where = f"blocks[{t}]"
        _keys(b, where, {"row", "col", "owner", "values"})
        key = (_int(b["row"], f"{where}.row"), _int(b["col"], f"{where}.col"))
        if key in blocks:
            raise ProblemFileError(f"{where}: duplicate block {key}")
        blocks[key] = _array(b["values"], f"{where}.values", 2)
        owner[key] = _int(b["owner"], f"{where}.owner")
    h, split = {}, {}
    if not isinstance(data["h"], list):
        raise ProblemFileError("h: expected a list")
    for t, entry in enumerate(data["h"]):
        where = f"h[{t}]"
        _keys(entry, where, {"row", "values"}, {"split"})
        k = _int(entry["row"], f"{where}.row")
        if k in h:
            raise ProblemFileError(f"{where}: duplicate row {k}")
        h[k] = _array(entry["values"], f"{where}.values", 1)
        if "split" in entry:
            sp = entry["split"]
            _keys(sp, f"{where}.split", {"mode"}, {"parts"})
            parts = None
            if "parts" in sp:
                if not isinstance(sp["parts"], list):
                    raise ProblemFileError(f"{where}.split.parts: expected a list")
                parts = {}
                for u, part in enumerate(sp["parts"]):
                    pw = f"{where}.split.parts[{u}]"
                    _keys(part, pw, {"agent", "values"})
                    parts[_int(part["agent"], f"{pw}.agent")] = _array(part["values"], f"{pw}.values", 1)
            try:
                split[k] = SplitPolicy(sp["mode"], parts)
            except ProblemError as exc:
                raise ProblemFileError(f"{where}.split: {exc}") from exc
    _keys(data["graph"], "graph", {"edges"})
    edges = data["graph"]["edges"]
    if not isinstance(edges, list):
        raise ProblemFileError("graph.edges: expected a list")
    pairs = []
    for t, e in enumerate(edges):
        if not (isinstance(e, list) and len(e) == 2):
            raise ProblemFileError(f"graph.edges[{t}]: expected a pair [i, j]")
        pairs.append((_int(e[0], f"graph.edges[{t}][0]"), _int(e[1], f"graph.edges[{t}][1]")))
    try:
        graph = Graph.from_edges(n_agents, pairs)
    except GraphError as exc:
        raise ProblemFileError(f"graph.edges: {exc}") from exc
    try:
        problem = BlockProblem(row_dims, col_dims, n_agents, blocks, owner, h, split)
    except ProblemError as exc:
        raise ProblemFileError(f"problem: {exc}") from exc
    return problem, graph


def problem_to_dict(p: BlockProblem, g: Graph) -> dict:
    h = []
    for k in range(1, p.K + 1):
        entry = {"row": k, "values": p.h_parts[k].tolist()}
        pol = p.h_split[k]
        entry["split"] = {"mode": pol.mode}
        if pol.mode == "explicit":
            entry["split"]["parts"] = [
                {"agent": i, "values": pol.parts[i].tolist()} for i in sorted(pol.parts)
            ]
        h.append(entry)
    return {
        "row_dims": list(p.row_dims),
        "col_dims": list(p.col_dims),
        "agents": p.N,
        "blocks": [
            {"row": k, "col": l, "owner": p.owner[k, l], "values": p.blocks[k, l].tolist()}
            for k, l in sorted(p.blocks)
        ],
        "h": h,
        "graph": {"edges": [list(e) for e in g.sorted_edges()]},
    }


def load_problem(path) -> tuple[BlockProblem, Graph]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFileError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}: invalid JSON ({exc})") from exc
    return problem_from_dict(data)


def save_problem(path, p: BlockProblem, g: Graph) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p, g), indent=1) + "\n", encoding="utf-8")
