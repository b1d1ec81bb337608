import json

import numpy as np
import pytest

from blocklsq.generators import gen_appendixA, gen_fig3, gen_grid
from blocklsq.problem_file import ProblemFileError, load_problem, problem_from_dict, problem_to_dict, save_problem


def _equal(a, b):
    pa, ga = a
    pb, gb = b
    assert ga == gb
    assert (pa.row_dims, pa.col_dims, pa.N, pa.owner) == (pb.row_dims, pb.col_dims, pb.N, pb.owner)
    assert set(pa.blocks) == set(pb.blocks)
    for k in pa.blocks:
        assert np.array_equal(pa.blocks[k], pb.blocks[k])
    for k in pa.h_parts:
        assert np.array_equal(pa.h_parts[k], pb.h_parts[k])
        sa, sb = pa.h_split[k], pb.h_split[k]
        assert sa.mode == sb.mode
        if sa.mode == "explicit":
            assert sa.parts.keys() == sb.parts.keys()
            assert all(np.array_equal(sa.parts[i], sb.parts[i]) for i in sa.parts)


@pytest.mark.parametrize("pair", [gen_grid(2, 3, 4, 2, seed=1), gen_fig3(2), gen_appendixA(seed=8)])
def test_roundtrip_bit_exact(tmp_path, pair):
    path = tmp_path / "p.json"
    save_problem(path, *pair)
    first = load_problem(path)
    _equal(pair, first)
    save_problem(path, *first)
    _equal(first, load_problem(path))


def _base():
    return problem_to_dict(*gen_appendixA((1,) * 6, (1,) * 4, seed=0))


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.update(extra=1), "problem"),
    (lambda d: d["blocks"][2].update(color="red"), "blocks[2]"),
    (lambda d: d["h"][1].update(note=""), "h[1]"),
    (lambda d: d["h"][1]["split"].update(weights=[]), "h[1].split"),
    (lambda d: d["h"][1]["split"]["parts"][0].update(x=0), "h[1].split.parts[0]"),
    (lambda d: d["graph"].update(directed=False), "graph"),
])
def test_unknown_fields_rejected(mutate, field):
    d = _base()
    mutate(d)
    with pytest.raises(ProblemFileError, match=f"^{field.replace('[', '.').replace(']', '.')}: unknown"):
        problem_from_dict(d)


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("graph"), "problem: missing"),
    (lambda d: d.update(agents="5"), "agents"),
    (lambda d: d["row_dims"].__setitem__(0, 1.5), r"row_dims\[0\]"),
    (lambda d: d["blocks"][0].update(values=[["a"]]), r"blocks\[0\]\.values"),
    (lambda d: d["blocks"][0].update(values=[1.0]), r"blocks\[0\]\.values"),
    (lambda d: d["blocks"][1].update(row=d["blocks"][0]["row"], col=d["blocks"][0]["col"]), r"blocks\[1\]"),
    (lambda d: d["h"][0].update(values=[float("nan")]), r"h\[0\]\.values"),
    (lambda d: d["h"][1]["split"].update(mode="random"), r"h\[1\]\.split"),
    (lambda d: d["graph"]["edges"].append([1, 1]), "graph.edges"),
    (lambda d: d["graph"]["edges"].append([1]), r"graph\.edges\[6\]"),
    (lambda d: d["blocks"][0].update(values=[[1.0, 2.0]]), "problem: block"),
])
def test_malformed_fields_named(mutate, field):
    d = _base()
    mutate(d)
    with pytest.raises(ProblemFileError, match=field):
        problem_from_dict(d)


def test_unreadable_and_invalid_json(tmp_path):
    with pytest.raises(ProblemFileError, match="cannot read"):
        load_problem(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ProblemFileError, match="invalid JSON"):
        load_problem(bad)


def test_split_optional_defaults_to_equal():
    d = _base()
    for entry in d["h"]:
        entry.pop("split")
    p, _ = problem_from_dict(d)
    assert all(pol.mode == "equal" for pol in p.h_split.values())


def test_file_is_plain_json(tmp_path):
    path = tmp_path / "p.json"
    save_problem(path, *gen_fig3(1))
    data = json.loads(path.read_text())
    assert data["graph"]["edges"][0] == [1, 2]
    assert data["blocks"][0] == {"row": 1, "col": 1, "owner": 1, "values": [[1.0, 2.0, 1.0, 1.0]]}
