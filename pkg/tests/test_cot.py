from __future__ import annotations

import re

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from bridgelab.cot import (SYSTEM_PROMPT, ExtractionError, Task, TemplateError, eval_link,
                           extract_dag, parse_model_output, render_answer, render_cot,
                           render_query, render_sft_record)
from bridgelab.dag import Dag, Node, classify_roles, const, diff, mul, necessary, topo_sort, with_values
from bridgelab.igsm import IgsmConfig, generate_igsm
from bridgelab.promptbench import PbConfig, generate_pb
from bridgelab.worked_examples import igsm_example, pb_example

IGSM_QUERY = """\
The number of each Graphic Design Studio's Manager Backpack equals the difference of each Rising Stars Junior High's Classroom and each Oakwood Middle School's Classroom.
The number of each Painting Room's Designer Bag equals 0 more than each Oakwood Middle School's Pottery Classroom.
The number of each Painting Room's Printed Casual Backpack equals 9 more than the sum of each Painting Room's Designer Bag and each Pottery Classroom's Printed Casual Backpack.
The number of each Crestview Middle School's Graphic Design Studio equals the difference of each Painting Room's Designer Bag and each Oakwood Middle School's Painting Room.
The number of each Pottery Classroom's Designer Bag equals each Painting Room's Designer Bag.
The number of each Pottery Classroom's Manager Backpack equals 0.
The number of each Pottery Classroom's Printed Casual Backpack equals 1.
The number of each Rising Stars Junior High's Pottery Classroom equals 2 times each Oakwood Middle School's Classroom.
The number of each Oakwood Middle School's Painting Room equals 6.
The number of each Crestview Middle School's Painting Room equals 5.
The number of each Painting Room's Manager Backpack equals 0 more than the sum of each Graphic Design Studio's Backpack, each Oakwood Middle School's Pottery Classroom and each Oakwood Middle School's Painting Room.
The number of each Oakwood Middle School's Pottery Classroom equals 5 times each Pottery Classroom's Printed Casual Backpack.
The number of each Oakwood Middle School's Graphic Design Studio equals 8 more than each Painting Room's Designer Bag.
How many Manager Backpack does each Graphic Design Studio have?"""

IGSM_COT = """\
Let's compute the answer step by step.
- According to the information given, the number of each Pottery Classroom's Printed Casual Backpack is 1. Let's denote it as S. So S = 1.
- Next, let Q represent the number of each Oakwood Middle School's Pottery Classroom. Then Q = 5 * S = 5 * 1 = 5.
- Now, we can find the number of each Painting Room's Designer Bag. Let's denote it as U. Then U = 0 + Q = 0 + 5 = 5.
- We can then calculate the number of each Oakwood Middle School's Graphic Design Studio. Let it be m. Then m = 8 + U = 8 + 5 = 13.
- The number of each Oakwood Middle School's Painting Room is 6. Let's denote it as W. So W = 6.
- Then, let's denote the number of each Oakwood Middle School's Classroom as v. Then v = m + Q + W = 13 + 5 + 6 = 24.
- We can then calculate the number of each Rising Stars Junior High's Pottery Classroom. Let it be B. Then B = 2 * v = 2 * 24 = 48.
- Now, we can find the number of each Rising Stars Junior High's Classroom. Let it be p. Then p = B = 48.
- Next, let y represent the number of each Graphic Design Studio's Manager Backpack. Then y = p - v = 48 - 24 = 24.
Thus, the answer is 24."""


def worked_task(which: str) -> Task:
    ex = igsm_example() if which == "igsm" else pb_example()
    fam = "igsm" if which == "igsm" else "promptbench"
    query = render_query(ex.dag, fam, order=ex.premise_order)
    cot = render_cot(ex.dag, ex.solve_order, fam, aliases=ex.aliases, leads=ex.leads)
    return Task(which, fam, tuple(query), ex.dag, cot, ex.dag[ex.dag.target].value)


class TestWorkedText:
    def test_igsm_query_verbatim(self):
        assert worked_task("igsm").query_text() == IGSM_QUERY

    def test_igsm_cot_verbatim(self):
        assert worked_task("igsm").answer_text() == IGSM_COT

    def test_pb_query_lines(self):
        q = worked_task("pb").query
        assert len(q) == 21
        assert "aab gets its value by squaring the value that aaa has." in q
        assert "aap gets its value by subtracting the value of aao from the value of aaf." in q
        assert q[-1] == "What is the value of aap?"

    def test_pb_cot_lines(self):
        lines = worked_task("pb").answer_text().splitlines()
        assert "Let's solve aab, aab = aaa^2 = 81" in lines
        assert "Let's solve aai, aai = aag * aah = 12" in lines
        # subtraction is written minuend first
        assert "Let's solve aap, aap = aaf - aao = 55" in lines
        assert "Let's solve aae, aae = aad - aac = 0" in lines
        assert lines[-1] == "Thus, the answer is 55."

    def test_igsm_step_text(self):
        assert "Then Q = 5 * S = 5 * 1 = 5." in worked_task("igsm").answer_text()


class TestRender:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            render_query(igsm_example().dag, "gsm8k")

    def test_template_error_for_family(self):
        dag = with_values(Dag((Node(0, "a's b", const(2)), Node(1, "c's d", mul(0, 0))), 1))
        with pytest.raises(TemplateError):
            render_query(dag, "igsm", seed=0)

    def test_degenerate_pb_query(self):
        dag = classify_roles(with_values(Dag((Node(0, "aaa", const(3)),), 0)))
        assert render_query(dag, "promptbench", seed=1) == ["The value of aaa is 3.", "What is the value of aaa?"]

    def test_single_const_cot(self):
        dag = classify_roles(with_values(Dag((Node(0, "aaa", const(3)),), 0)))
        cot = render_cot(dag, [0], "promptbench")
        assert render_answer(dag, cot, "promptbench", 3).splitlines() == [
            "Let's compute the answer step by step.", "Let's solve aaa, aaa is 3", "Thus, the answer is 3."]

    def test_bad_order_rejected(self):
        ex = igsm_example()
        with pytest.raises(ValueError):
            render_cot(ex.dag, tuple(reversed(ex.solve_order)), "igsm")

    def test_aliases_are_distinct_letters(self):
        task = generate_igsm(IgsmConfig(), seed=4)
        aliases = [s.alias for s in task.cot]
        assert len(set(aliases)) == len(aliases)
        assert all(re.fullmatch(r"[A-Za-z]", a) for a in aliases)

    def test_negative_operands_parenthesised(self):
        dag = classify_roles(with_values(Dag((Node(0, "aaa", const(-3)), Node(1, "aab", const(2)),
                                              Node(2, "aac", diff(1, 0))), 2)))
        task = Task("n", "igsm", (), dag, (), 5)
        dag2 = with_values(Dag((Node(0, "x's a", const(-3)), Node(1, "x's b", const(2)),
                                Node(2, "x's c", diff(1, 0))), 2))
        cot = render_cot(classify_roles(dag2), [0, 1, 2], "igsm", seed=0)
        assert cot[-1].chain[1] == "2 - (-3)"
        assert task.dag[2].value == 5


class TestEvalLink:
    @pytest.mark.parametrize("text,value,ops", [
        ("13 + 5 + 6", 24, 2), ("2 * 24", 48, 1), ("48 - 24", 24, 1), ("9^2", 81, 1),
        ("2 - (-3)", 5, 1), ("7", 7, 0),
    ])
    def test_values(self, text, value, ops):
        assert eval_link(text) == (value, ops)

    @pytest.mark.parametrize("text", ["1 / 2", "x + 1", "2 ** 3", "1.5 + 1", "__import__('os')"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            eval_link(text)

    def test_names_from_env(self):
        assert eval_link("m + Q + W", {"m": 13, "Q": 5, "W": 6}) == (24, 2)


class TestExtract:
    def test_igsm_worked_pair(self):
        dag = extract_dag(IGSM_QUERY, IGSM_COT, "igsm")
        src = igsm_example().dag
        assert dag.signature(roles=True) == src.signature(roles=True)
        assert len([n for n in dag.nodes if n.layer == "instance"]) == 13
        assert dag[dag.target].value == 24

    def test_pb_worked_pair(self):
        t = worked_task("pb")
        dag = extract_dag(t.query_text(), t.answer_text(), "promptbench")
        assert dag.signature(roles=True) == t.dag.signature(roles=True)
        assert dag.edges() == {(dag.by_name[a].id, dag.by_name[b].id) for a, b in [
            ("aaa", "aab"), ("aac", "aae"), ("aad", "aae"), ("aab", "aaf"), ("aae", "aaf"),
            ("aag", "aai"), ("aah", "aai"), ("aaj", "aan"), ("aak", "aan"), ("aai", "aao"),
            ("aan", "aao"), ("aaf", "aap"), ("aao", "aap"), ("aaq", "aas"), ("aar", "aas"),
            ("aat", "aav"), ("aau", "aav")]}

    def test_single_premise(self):
        dag = extract_dag("The value of aaa is 4.\nWhat is the value of aaa?",
                          "Let's solve aaa, aaa is 4", "promptbench")
        assert len(dag) == 1 and dag[dag.target].value == 4

    def test_unparseable_sentence_named(self):
        with pytest.raises(ExtractionError, match="The moon is made of cheese"):
            extract_dag("The moon is made of cheese.\nWhat is the value of aaa?", "", "promptbench")

    def test_inconsistent_value_rejected(self):
        bad = IGSM_COT.replace("So W = 6.", "So W = 7.").replace("is 6. Let's", "is 7. Let's")
        with pytest.raises(ExtractionError):
            extract_dag(IGSM_QUERY, bad, "igsm")

    def test_aggregate_members_from_cot_without_known_category(self):
        q = ("The number of each Zed's Apple equals 3.\nThe number of each Zed's Pear equals 4.\n"
             "The number of each Yan's Fig equals 2 times each Zed's Fruit.\n"
             "How many Fig does each Yan have?")
        cot = ("Let's compute the answer step by step.\n"
               "- The number of each Zed's Apple is 3. Let's denote it as a. So a = 3.\n"
               "- The number of each Zed's Pear is 4. Let's denote it as b. So b = 4.\n"
               "- Next, let c represent the number of each Zed's Fruit. Then c = a + b = 3 + 4 = 7.\n"
               "- Next, let d represent the number of each Yan's Fig. Then d = 2 * c = 2 * 7 = 14.\n"
               "Thus, the answer is 14.")
        dag = extract_dag(q, cot, "igsm")
        assert dag[dag.target].value == 14

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(0, 10**6))
    def test_premise_order_never_matters_igsm(self, seed, perm_seed):
        task = generate_igsm(IgsmConfig(op_range=(4, 10)), seed=seed)
        q2 = render_query(task.dag, "igsm", seed=perm_seed)
        a = extract_dag(task.query, task.answer_text(), "igsm")
        b = extract_dag(q2, task.answer_text(), "igsm")
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 5), st.integers(0, 4))
    def test_roundtrip_pb(self, seed, depth, red):
        task = generate_pb(PbConfig(depth=depth, redundancy_range=(0, red)), seed=seed)
        dag = extract_dag(task.query, task.answer_text(), "promptbench")
        assert dag.signature(roles=True) == task.dag.signature(roles=True)
        assert dag.edges() == {(dag.by_name[task.dag[u].name].id, dag.by_name[task.dag[v].name].id)
                               for u, v in task.dag.edges()}


class TestSft:
    def test_contains_system_sentence(self):
        rec = render_sft_record(worked_task("igsm"))
        assert ("The reasoning process and answer are enclosed within <think> </think> and "
                "<answer> </answer> tags") in rec
        assert SYSTEM_PROMPT in rec

    def test_boxed_gold_at_end(self):
        assert render_sft_record(worked_task("igsm")).endswith("\\boxed{24} </answer><|im_end|>")

    @pytest.mark.parametrize("family", ["qwen", "llama", "plain"])
    def test_parse_recovers_gold(self, family):
        rec = render_sft_record(worked_task("pb"), family)
        out = parse_model_output(re.sub(r"<\|[a-z_]+\|>", "", rec[rec.rindex("<think>"):]))
        assert out.final_answer == 55 and out.format_ok

    def test_empty_cot_well_formed(self):
        dag = classify_roles(with_values(Dag((Node(0, "aaa", const(3)),), 0)))
        t = Task("e", "promptbench", ("What is the value of aaa?",), dag, (), 3)
        rec = render_sft_record(t)
        body = rec[rec.rindex("<think>"):].removesuffix("<|im_end|>")
        assert parse_model_output(body).format_ok

    def test_unknown_template_family(self):
        with pytest.raises(ValueError):
            render_sft_record(worked_task("pb"), "mistral")


class TestParseOutput:
    def test_template_instance(self):
        out = parse_model_output("<think>x</think> <answer> The final answer is \\boxed{24} </answer>")
        assert (out.final_answer, out.format_ok) == (24, True)

    def test_missing_close(self):
        out = parse_model_output("<think>x</think> <answer> The final answer is \\boxed{24}")
        assert out.format_ok is False
        assert out.final_answer == 24

    def test_non_integer_boxed(self):
        out = parse_model_output("<think>x</think> <answer> \\boxed{2.5} </answer>")
        assert out.final_answer is None and out.format_ok

    def test_last_boxed_wins(self):
        out = parse_model_output("<think>\\boxed{1}</think><answer>\\boxed{2} \\boxed{-3}</answer>")
        assert out.final_answer == -3

    @given(st.text())
    def test_never_raises(self, text):
        parse_model_output(text)
