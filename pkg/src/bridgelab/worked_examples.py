"""The two reference problems (one iGSM, one PromptBench) as ready-made DAGs.

They pin the templates and arithmetic conventions. Each comes with the
premise order, solving order, aliases and lead-in choices that reproduce
its reference text.
"""
from __future__ import annotations

from dataclasses import dataclass

from .dag import (Dag, Node, add_k, classify_roles, const, diff, mul, plain_sum,
                  scale, square, sum_children, with_values)


@dataclass(frozen=True)
class WorkedExample:
    dag: Dag
    premise_order: tuple[int, ...]
    solve_order: tuple[int, ...]
    aliases: dict
    leads: dict


def igsm_example() -> WorkedExample:
    inst = "instance"
    nodes = [
        Node(0, "Graphic Design Studio's Manager Backpack", diff(14, 13), layer=inst),
        Node(1, "Painting Room's Designer Bag", add_k(0, [11]), layer=inst),
        Node(2, "Painting Room's Printed Casual Backpack", add_k(9, [1, 6]), layer=inst),
        Node(3, "Crestview Middle School's Graphic Design Studio", diff(1, 8), layer=inst),
        Node(4, "Pottery Classroom's Designer Bag", plain_sum([1]), layer=inst),
        Node(5, "Pottery Classroom's Manager Backpack", const(0), layer=inst),
        Node(6, "Pottery Classroom's Printed Casual Backpack", const(1), layer=inst),
        Node(7, "Rising Stars Junior High's Pottery Classroom", scale(2, 13), layer=inst),
        Node(8, "Oakwood Middle School's Painting Room", const(6), layer=inst),
        Node(9, "Crestview Middle School's Painting Room", const(5), layer=inst),
        Node(10, "Painting Room's Manager Backpack", add_k(0, [15, 11, 8]), layer=inst),
        Node(11, "Oakwood Middle School's Pottery Classroom", scale(5, 6), layer=inst),
        Node(12, "Oakwood Middle School's Graphic Design Studio", add_k(8, [1]), layer=inst),
        Node(13, "Oakwood Middle School's Classroom", sum_children([12, 11, 8]), layer="abstract"),
        Node(14, "Rising Stars Junior High's Classroom", sum_children([7]), layer="abstract"),
        Node(15, "Graphic Design Studio's Backpack", sum_children([0]), layer="abstract"),
    ]
    dag = classify_roles(with_values(Dag(tuple(nodes), 0)))
    solve = (6, 11, 1, 12, 8, 13, 7, 14, 0)
    aliases = dict(zip(solve, "SQUmWvBpy"))
    # lead-in template per step; consts index the constant templates
    leads = {6: 0, 11: 0, 1: 1, 12: 2, 8: 1, 13: 3, 7: 2, 14: 4, 0: 0}
    return WorkedExample(dag, tuple(range(13)), solve, aliases, leads)


_PB_NAMES = [a + b + c for a in "abcdefghijklmnopqrstuvwxyz"
             for b in "abcdefghijklmnopqrstuvwxyz" for c in "abcdefghijklmnopqrstuvwxyz"]


def pb_example() -> WorkedExample:
    ix = {name: i for i, name in enumerate(_PB_NAMES[:22])}
    spec = {
        "aaa": const(9), "aab": square(ix["aaa"]), "aac": const(5), "aad": const(5),
        "aae": diff(ix["aad"], ix["aac"]), "aaf": plain_sum([ix["aab"], ix["aae"]]),
        "aag": const(6), "aah": const(2), "aai": mul(ix["aah"], ix["aag"]),
        "aaj": const(5), "aak": const(9), "aan": plain_sum([ix["aak"], ix["aaj"]]),
        "aao": plain_sum([ix["aai"], ix["aan"]]), "aap": diff(ix["aaf"], ix["aao"]),
        "aaq": const(5), "aar": const(2), "aas": mul(ix["aaq"], ix["aar"]),
        "aat": const(3), "aau": const(10), "aav": mul(ix["aat"], ix["aau"]),
    }
    nodes = tuple(Node(ix[name], name, e) for name, e in spec.items())
    dag = classify_roles(with_values(Dag(nodes, ix["aap"])))
    premises = ("aac aaf aaj aak aar aaa aat aao aad aas aaq aan aau aai aap aah "
                "aav aab aag aae").split()
    solve = "aaa aab aac aad aae aaf aah aaj aag aai aak aan aao aap".split()
    return WorkedExample(dag, tuple(ix[p] for p in premises), tuple(ix[s] for s in solve),
                         {ix[s]: s for s in solve}, {})
