"""Rooted recursive graph patterns and their assertion partitions.

A rule applies to every node carrying all of its root labels.  Starting from
such a node, the traversal follows each child ``(predicate, direction,
subrule)``: it requires at least one direction-respecting neighbor carrying
the subrule's root labels, and every such matching neighbor must itself
satisfy the subrule's children.  A failure at any depth makes the start node
an exception; otherwise the start is a correct assertion and the traversal's
edges and non-root labels count as covered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .graph import KnowledgeGraph

OUT = 0  # root/parent is the subject of the edge
IN = 1  # root/parent is the object of the edge

DIRECTION_NAMES = ("out", "in")
DIRECTION_IDS = {"out": OUT, "in": IN}


class RuleFormatError(ValueError):
    """A structurally invalid serialized rule."""


@dataclass(frozen=True)
class Rule:
    root_labels: frozenset[int]
    children: tuple["Child", ...] = ()

    def is_leaf(self) -> bool:
        return not self.children

    def depth(self) -> int:
        return 1 + max((c.child.depth() for c in self.children), default=0)


@dataclass(frozen=True)
class Child:
    predicate: int
    direction: int
    child: Rule


@dataclass(frozen=True)
class AssertionSet:
    """Partition of a rule's starts plus what its correct traversals reveal."""

    rule: Rule
    correct_starts: frozenset[int]
    exception_starts: frozenset[int]
    covered_edges: frozenset[tuple[int, int, int]]
    covered_labels: frozenset[tuple[int, int]]

    @property
    def num_assertions(self) -> int:
        return len(self.correct_starts) + len(self.exception_starts)


def atomic(root_label: int, predicate: int, direction: int, child_label: int) -> Rule:
    return Rule(
        frozenset((root_label,)),
        (Child(predicate, direction, Rule(frozenset((child_label,)))),),
    )


def _sort_key(rule: Rule):
    return (
        tuple(sorted(rule.root_labels)),
        tuple((c.predicate, c.direction, _sort_key(c.child)) for c in rule.children),
    )


def canonicalize(rule: Rule) -> Rule:
    """Children sorted by (predicate, direction, recursive child key); idempotent."""
    children = tuple(
        sorted(
            (Child(c.predicate, c.direction, canonicalize(c.child)) for c in rule.children),
            key=lambda c: (c.predicate, c.direction, _sort_key(c.child)),
        )
    )
    return Rule(rule.root_labels, children)


def atoms(rule: Rule) -> list[Rule]:
    """Decompose into single-child, single-level constituent rules."""
    out: list[Rule] = []
    for c in rule.children:
        out.append(Rule(rule.root_labels, (Child(c.predicate, c.direction, Rule(c.child.root_labels)),)))
        out.extend(atoms(c.child))
    return out


def iter_positions(rule: Rule, _path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Rule]]:
    """All (child-index path, rule node) pairs, root included at the empty path."""
    yield _path, rule
    for i, c in enumerate(rule.children):
        yield from iter_positions(c.child, _path + (i,))


def matching_neighbors(g: KnowledgeGraph, node: int, child: Child) -> list[int]:
    """Direction-respecting neighbors of ``node`` carrying the child's root labels."""
    index = g.out_index if child.direction == OUT else g.in_index
    neighbors = index.get((node, child.predicate))
    if not neighbors:
        return []
    want = child.child.root_labels
    return [w for w in neighbors if want <= g.node_labels[w]]


def match(rule: Rule, g: KnowledgeGraph) -> AssertionSet:
    """Partition the rule's starts and collect the coverage of correct traversals.

    Unknown label/predicate ids simply never match.  Repeated
    (node, rule-node) expansions are memoized; rules are finite trees, so the
    traversal terminates on any graph.
    """
    if not rule.root_labels:
        raise RuleFormatError("rule root_labels must be nonempty")
    starts = g.nodes_with_labels(rule.root_labels)

    ok_memo: dict[tuple[int, int], bool] = {}

    def ok(u: int, r: Rule) -> bool:
        key = (u, id(r))
        hit = ok_memo.get(key)
        if hit is not None:
            return hit
        result = True
        for c in r.children:
            ws = matching_neighbors(g, u, c)
            if not ws:
                result = False
                break
            if not all(ok(w, c.child) for w in ws):
                result = False
                break
        ok_memo[key] = result
        return result

    correct = frozenset(v for v in starts if ok(v, rule))
    exceptions = frozenset(starts) - correct

    covered_edges: set[tuple[int, int, int]] = set()
    covered_labels: set[tuple[int, int]] = set()
    expanded: set[tuple[int, int]] = set()

    def collect(u: int, r: Rule) -> None:
        key = (u, id(r))
        if key in expanded:
            return
        expanded.add(key)
        for c in r.children:
            for w in matching_neighbors(g, u, c):
                covered_edges.add((u, c.predicate, w) if c.direction == OUT else (w, c.predicate, u))
                for l in c.child.root_labels:
                    covered_labels.add((w, l))
                collect(w, c.child)

    for v in sorted(correct):
        collect(v, rule)

    return AssertionSet(rule, correct, exceptions, frozenset(covered_edges), frozenset(covered_labels))


# -- serialization -----------------------------------------------------


def rule_to_dict(rule: Rule, g: KnowledgeGraph) -> dict:
    return {
        "root_labels": sorted(g.label_names[l] for l in rule.root_labels),
        "children": [
            {
                "predicate": g.pred_names[c.predicate],
                "direction": DIRECTION_NAMES[c.direction],
                "child": rule_to_dict(c.child, g),
            }
            for c in rule.children
        ],
    }


def rule_from_dict(data: dict, g: KnowledgeGraph) -> Rule:
    """Parse and canonicalize a serialized rule; unknown names are errors."""
    if not isinstance(data, dict):
        raise RuleFormatError(f"rule must be an object, got {type(data).__name__}")
    names = data.get("root_labels")
    if not names or not isinstance(names, list):
        raise RuleFormatError("root_labels must be a nonempty list")
    labels = set()
    for name in names:
        lid = g.label_id(name)
        if lid is None:
            raise RuleFormatError(f"unknown label {name!r}")
        labels.add(lid)
    children = []
    for entry in data.get("children", []):
        pred = g.pred_id(entry.get("predicate", ""))
        if pred is None:
            raise RuleFormatError(f"unknown predicate {entry.get('predicate')!r}")
        direction = DIRECTION_IDS.get(entry.get("direction", ""))
        if direction is None:
            raise RuleFormatError(f"direction must be 'out' or 'in', got {entry.get('direction')!r}")
        children.append(Child(pred, direction, rule_from_dict(entry.get("child", {}), g)))
    return canonicalize(Rule(frozenset(labels), tuple(children)))


def rule_text(rule: Rule, g: KnowledgeGraph) -> str:
    """Compact one-line rendering for logs and reports."""
    root = ",".join(sorted(g.label_names[l] for l in rule.root_labels))
    if rule.is_leaf():
        return f"[{root}]"
    parts = []
    for c in rule.children:
        arrow = "->" if c.direction == OUT else "<-"
        parts.append(f"{arrow}{g.pred_names[c.predicate]}{rule_text(c.child, g)}")
    return f"[{root}](" + " ".join(parts) + ")"
