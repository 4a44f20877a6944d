from __future__ import annotations

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from bridgelab.dag import (CycleError, Dag, Expr, Node, OverflowReject, add_k, ancestors,
                           classify_roles, const, diff, evaluate, locked_nodes, longest_path,
                           necessary, op_count, plain_sum, redundancy, scale, square,
                           sum_children, topo_sort, validate, with_values)
from bridgelab.worked_examples import igsm_example, pb_example


def chain() -> Dag:
    return Dag((Node(0, "a", const(2)), Node(1, "b", add_k(1, [0])), Node(2, "c", scale(3, 1))), 2)


@st.composite
def random_dags(draw):
    """Random DAGs whose refs always point at lower ids (so acyclic)."""
    n = draw(st.integers(1, 12))
    nodes = []
    for i in range(n):
        if i == 0 or draw(st.booleans()) and i < 3:
            e = const(draw(st.integers(-9, 9)))
        else:
            kind = draw(st.sampled_from(["addk", "diff", "scale", "square", "sum"]))
            pick = st.integers(0, i - 1)
            if kind == "addk":
                e = add_k(draw(st.integers(0, 9)), draw(st.lists(pick, min_size=1, max_size=3)))
            elif kind == "diff":
                e = diff(draw(pick), draw(pick))
            elif kind == "scale":
                e = scale(draw(st.integers(2, 9)), draw(pick))
            elif kind == "square":
                e = square(draw(pick))
            else:
                e = plain_sum(draw(st.lists(pick, min_size=1, max_size=3)))
        nodes.append(Node(i, f"n{i}", e))
    perm = draw(st.permutations(nodes))
    return Dag(tuple(perm), draw(st.integers(0, n - 1)))


class TestExpr:
    @pytest.mark.parametrize("op,refs,k", [
        ("const", (1,), 3), ("addk", (), 1), ("diff", (1,), None), ("scale", (1,), 1),
        ("square", (1, 2), None), ("addk", (1,), -1), ("nope", (), None), ("const", (), None),
    ])
    def test_rejects_bad_shapes(self, op, refs, k):
        with pytest.raises(ValueError):
            Expr(op, refs, k)

    def test_roundtrip_dict(self):
        for e in [const(3), add_k(2, [1, 2]), diff(0, 1), scale(4, 2), square(1), sum_children([3, 1])]:
            assert Expr.from_dict(e.to_dict()) == e


class TestValidate:
    def test_chain_is_valid(self):
        assert validate(chain()) == []

    def test_self_loop(self):
        dag = Dag((Node(0, "x", add_k(0, [0])),), 0)
        assert validate(dag) == ["cycle at 0"]

    def test_dangling_ref(self):
        dag = Dag((Node(0, "x", add_k(0, [9])),), 0)
        assert validate(dag) == ["dangling ref 9 in node 0"]

    def test_duplicate_names_and_target(self):
        dag = Dag((Node(0, "x", const(1)), Node(1, "x", const(2))), 5)
        problems = validate(dag)
        assert "duplicate name 'x'" in problems
        assert "target 5 is not a node" in problems

    def test_second_target_role(self):
        dag = Dag((Node(0, "x", const(1), role="target"), Node(1, "y", const(2), role="target")), 1)
        assert any("target role" in p for p in validate(dag))


class TestTopoSort:
    def test_chain_unique(self):
        assert topo_sort(chain()) == [0, 1, 2]
        assert topo_sort(chain(), seed=5) == [0, 1, 2]

    def test_independent_leaves_depend_on_seed(self):
        dag = Dag((Node(0, "x", const(1)), Node(1, "y", const(2)), Node(2, "z", plain_sum([0, 1]))), 2)
        orders = {tuple(topo_sort(dag, seed=s)) for s in range(30)}
        assert orders == {(0, 1, 2), (1, 0, 2)}

    def test_cycle_raises(self):
        dag = Dag((Node(0, "x", add_k(0, [1])), Node(1, "y", add_k(0, [0]))), 0)
        with pytest.raises(CycleError):
            topo_sort(dag)

    def test_worked_example_order_is_a_linear_extension(self):
        ex = igsm_example()
        pos = {nid: i for i, nid in enumerate(ex.solve_order)}
        for u, v in ex.dag.edges():
            if u in pos and v in pos:
                assert pos[u] < pos[v]
        by = ex.dag.by_name
        assert pos[by["Pottery Classroom's Printed Casual Backpack"].id] < \
            pos[by["Oakwood Middle School's Pottery Classroom"].id]

    @settings(max_examples=80, deadline=None)
    @given(random_dags(), st.integers(0, 2**31))
    def test_linear_extension_property(self, dag, seed):
        order = topo_sort(dag, seed=seed)
        assert sorted(order) == sorted(dag.ids)
        pos = {nid: i for i, nid in enumerate(order)}
        assert all(pos[u] < pos[v] for u, v in dag.edges())
        assert topo_sort(dag, seed=seed) == order


class TestEvaluate:
    def test_igsm_values(self):
        dag = igsm_example().dag
        vals = {n.name: n.value for n in dag.nodes}
        expected = {
            "Pottery Classroom's Printed Casual Backpack": 1,
            "Oakwood Middle School's Pottery Classroom": 5,
            "Painting Room's Designer Bag": 5,
            "Oakwood Middle School's Graphic Design Studio": 13,
            "Oakwood Middle School's Painting Room": 6,
            "Oakwood Middle School's Classroom": 24,
            "Rising Stars Junior High's Pottery Classroom": 48,
            "Rising Stars Junior High's Classroom": 48,
            "Graphic Design Studio's Manager Backpack": 24,
        }
        for name, v in expected.items():
            assert vals[name] == v

    def test_pb_values(self):
        vals = {n.name: n.value for n in pb_example().dag.nodes}
        assert {k: vals[k] for k in ["aab", "aae", "aaf", "aai", "aan", "aao", "aap"]} == \
            {"aab": 81, "aae": 0, "aaf": 81, "aai": 12, "aan": 14, "aao": 26, "aap": 55}

    def test_single_const(self):
        assert evaluate(Dag((Node(0, "t", const(7)),), 0)) == {0: 7}

    def test_overflow_rejects(self):
        nodes = [Node(0, "a", const(2 ** 40))] + [Node(i, f"s{i}", square(i - 1)) for i in range(1, 3)]
        with pytest.raises(OverflowReject):
            evaluate(Dag(tuple(nodes), 2))

    @settings(max_examples=60, deadline=None)
    @given(random_dags(), st.integers(0, 2**31))
    def test_order_independent(self, dag, seed):
        try:
            base = evaluate(dag)
        except OverflowReject:
            return
        assert evaluate(dag, topo_sort(dag, seed=seed)) == base


class TestRoles:
    def test_chain_roles(self):
        roles = [n.role for n in classify_roles(chain()).nodes]
        assert roles == ["leaf", "intermediate", "target"]

    def test_pb_redundant_nodes(self):
        dag = pb_example().dag
        red = {n.name for n in dag.nodes if n.role == "redundant"}
        assert {"aas", "aav"} <= red
        assert red == {"aaq", "aar", "aas", "aat", "aau", "aav"}
        assert redundancy(dag) == 2

    def test_star_with_disconnected_consts(self):
        dag = Dag((Node(0, "a", const(1)), Node(1, "b", const(2)), Node(2, "t", plain_sum([0, 1])),
                   Node(3, "x", const(5)), Node(4, "y", const(6))), 2)
        roles = {n.name: n.role for n in classify_roles(dag).nodes}
        assert roles["x"] == roles["y"] == "redundant"
        assert redundancy(dag) == 2

    @settings(max_examples=60, deadline=None)
    @given(random_dags())
    def test_dropping_redundant_keeps_target(self, dag):
        try:
            full = with_values(dag)
        except OverflowReject:
            return
        need = necessary(dag)
        trimmed = Dag(tuple(n for n in dag.nodes if n.id in need), dag.target)
        assert evaluate(trimmed)[dag.target] == full[dag.target].value


class TestOpCount:
    def test_worked_example(self):
        assert op_count(igsm_example().dag) == 10

    @pytest.mark.parametrize("dag,expected", [
        (Dag((Node(0, "t", const(4)),), 0), 1),
        (Dag((Node(0, "a", const(4)), Node(1, "b", const(1)), Node(2, "t", diff(0, 1))), 2), 3),
        (Dag((Node(0, "a", const(4)), Node(1, "t", add_k(0, [0]))), 1), 2),
        (Dag((Node(0, "a", const(4)), Node(1, "b", const(1)),
              Node(2, "t", sum_children([0, 1]))), 2), 3),
    ])
    def test_small_cases(self, dag, expected):
        assert op_count(dag) == expected

    def test_redundant_nodes_do_not_count(self):
        base = Dag((Node(0, "t", const(4)),), 0)
        extra = Dag(base.nodes + (Node(1, "r", const(1)), Node(2, "s", diff(1, 1))), 0)
        assert op_count(extra) == op_count(base)


class TestLocked:
    def test_chain(self):
        assert locked_nodes(chain(), {0}) == {2}
        assert locked_nodes(chain(), {0, 1, 2}) == set()

    def test_worked_example_target_locked(self):
        dag = igsm_example().dag
        solved = {dag.by_name[n].id for n in [
            "Pottery Classroom's Printed Casual Backpack", "Oakwood Middle School's Pottery Classroom",
            "Painting Room's Designer Bag", "Oakwood Middle School's Graphic Design Studio",
            "Oakwood Middle School's Painting Room"]}
        assert dag.by_name["Graphic Design Studio's Manager Backpack"].id in locked_nodes(dag, solved)

    @settings(max_examples=60, deadline=None)
    @given(random_dags(), st.data())
    def test_monotone(self, dag, data):
        small = set(data.draw(st.lists(st.sampled_from(dag.ids), unique=True)))
        big = small | set(data.draw(st.lists(st.sampled_from(dag.ids), unique=True)))
        assert locked_nodes(dag, big) <= locked_nodes(dag, small)


def test_serialization_roundtrip():
    for dag in [igsm_example().dag, pb_example().dag]:
        assert Dag.from_dict(dag.to_dict()) == dag


def test_longest_path_counts_nodes():
    assert longest_path(chain()) == 3
    assert longest_path(pb_example().dag) == 4


def test_ancestors_exclude_self():
    assert ancestors(chain(), 2, include_self=False) == {0, 1}
