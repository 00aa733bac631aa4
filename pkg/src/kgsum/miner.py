"""End-to-end rule mining: generate, qualify, rank, greedily select under MDL,
then refine the selected model by merging shared-root rules and nesting rules
into inner positions of other rules.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import encoding
from .graph import KnowledgeGraph
from .rules import (
    IN,
    OUT,
    AssertionSet,
    Child,
    Rule,
    atomic,
    canonicalize,
    iter_positions,
    match,
    matching_neighbors,
    rule_from_dict,
    rule_text,
    rule_to_dict,
)


class ConfigError(ValueError):
    """Invalid mining configuration."""


def _root_key(rule: Rule, g: KnowledgeGraph) -> str:
    return ",".join(sorted(g.label_names[l] for l in rule.root_labels))


def _canon_key(rule: Rule, g: KnowledgeGraph):
    """Total order over canonical rules, by external names (interning-independent)."""
    return (
        tuple(sorted(g.label_names[l] for l in rule.root_labels)),
        tuple(
            (g.pred_names[c.predicate], c.direction, _canon_key(c.child, g))
            for c in canonicalize(rule).children
        ),
    )


@dataclass
class Candidate:
    """An atomic rule with cached assertions, coverage, and costs.

    ``per_start_matches`` maps each correct start to its matching-neighbor
    count; it stays valid under qualification (which never changes the
    correct starts or their traversals, only which nodes count as starts).
    """

    rule: Rule
    root_key: str
    canon_key: tuple
    correct_starts: set[int]
    num_assertions: int
    per_start_matches: dict[int, int]
    covered_edge_ids: set[int]
    covered_label_codes: set[int]
    rule_bits: float
    traversal_bits: float
    gain: float = 0.0
    reverse_partner: "Candidate | None" = None
    selected: bool = False

    @property
    def num_correct(self) -> int:
        return len(self.correct_starts)

    @property
    def num_exceptions(self) -> int:
        return self.num_assertions - len(self.correct_starts)

    @property
    def assertion_bits(self) -> float:
        return (
            encoding.assertion_overhead(self.num_assertions, self.num_exceptions)
            + self.traversal_bits
        )

    @property
    def model_bits(self) -> float:
        return self.rule_bits + self.assertion_bits


@dataclass(frozen=True)
class RuleEntry:
    """A selected rule with everything the model bookkeeping needs."""

    rule: Rule
    root_key: str
    canon_key: tuple
    correct_starts: frozenset[int]
    exception_starts: frozenset[int]
    covered_edge_ids: frozenset[int]
    covered_label_codes: frozenset[int]
    rule_bits: float
    assertion_bits: float

    @property
    def num_correct(self) -> int:
        return len(self.correct_starts)

    @property
    def num_exceptions(self) -> int:
        return len(self.exception_starts)

    @property
    def num_assertions(self) -> int:
        return len(self.correct_starts) + len(self.exception_starts)

    @property
    def model_bits(self) -> float:
        return self.rule_bits + self.assertion_bits


@dataclass
class Model:
    """Selected rules plus reference-counted coverage and the cost trace."""

    graph: KnowledgeGraph
    entries: list[RuleEntry] = field(default_factory=list)
    edge_refs: dict[int, int] = field(default_factory=dict)
    label_refs: dict[int, int] = field(default_factory=dict)
    total: float = 0.0
    history: list[tuple[str, str, float, float]] = field(default_factory=list)

    @property
    def rules(self) -> list[Rule]:
        return [e.rule for e in self.entries]

    @property
    def num_modeled_edges(self) -> int:
        return len(self.edge_refs)

    @property
    def num_modeled_labels(self) -> int:
        return len(self.label_refs)

    @property
    def rule_and_assertion_bits(self) -> float:
        return sum(e.model_bits for e in self.entries)

    def coverage(self) -> encoding.Coverage:
        g = self.graph
        nl = g.num_labels
        return encoding.Coverage(
            frozenset(g.distinct_edges[e] for e in self.edge_refs),
            frozenset(divmod(code, nl) for code in self.label_refs),
            g.num_distinct_edges,
            g.num_label_assignments,
            g.universe_edges,
            g.universe_labels,
        )

    def record(self, phase: str, what: str, new_total: float) -> None:
        self.history.append((phase, what, new_total - self.total, new_total))
        self.total = new_total

    def _cov_add(self, edge_ids: Iterable[int], label_codes: Iterable[int]) -> None:
        for e in edge_ids:
            self.edge_refs[e] = self.edge_refs.get(e, 0) + 1
        for c in label_codes:
            self.label_refs[c] = self.label_refs.get(c, 0) + 1

    def _cov_remove(self, edge_ids: Iterable[int], label_codes: Iterable[int]) -> None:
        for e in edge_ids:
            n = self.edge_refs[e] - 1
            if n:
                self.edge_refs[e] = n
            else:
                del self.edge_refs[e]
        for c in label_codes:
            n = self.label_refs[c] - 1
            if n:
                self.label_refs[c] = n
            else:
                del self.label_refs[c]


def _label_code(g: KnowledgeGraph, node: int, label: int) -> int:
    return node * g.num_labels + label


def entry_from_aset(aset: AssertionSet, g: KnowledgeGraph) -> RuleEntry:
    rule = aset.rule
    return RuleEntry(
        rule=rule,
        root_key=_root_key(rule, g),
        canon_key=_canon_key(rule, g),
        correct_starts=aset.correct_starts,
        exception_starts=aset.exception_starts,
        covered_edge_ids=frozenset(g.edge_id[t] for t in aset.covered_edges),
        covered_label_codes=frozenset(_label_code(g, n, l) for n, l in aset.covered_labels),
        rule_bits=encoding.rule_cost(rule, g),
        assertion_bits=encoding.assertions_cost(aset, g),
    )


def entry_from_rule(rule: Rule, g: KnowledgeGraph) -> RuleEntry:
    return entry_from_aset(match(rule, g), g)


def entry_from_candidate(c: Candidate, g: KnowledgeGraph) -> RuleEntry:
    exceptions = frozenset(g.nodes_with_labels(c.rule.root_labels)) - c.correct_starts
    return RuleEntry(
        rule=c.rule,
        root_key=c.root_key,
        canon_key=c.canon_key,
        correct_starts=frozenset(c.correct_starts),
        exception_starts=exceptions,
        covered_edge_ids=frozenset(c.covered_edge_ids),
        covered_label_codes=frozenset(c.covered_label_codes),
        rule_bits=c.rule_bits,
        assertion_bits=c.assertion_bits,
    )


# -- candidate generation ----------------------------------------------


class _Builder:
    __slots__ = ("start_matches", "edge_ids", "label_codes")

    def __init__(self) -> None:
        self.start_matches: dict[int, int] = {}
        self.edge_ids: set[int] = set()
        self.label_codes: set[int] = set()


def generate_candidates(g: KnowledgeGraph, label_cap: int | None = None) -> list[Candidate]:
    """One atomic candidate per (root label, predicate, direction, child label)
    pattern witnessed by at least one edge, in both orientations, with the two
    orientations linked as reverse partners."""
    allowed: set[int] | None = None
    if label_cap is not None:
        by_freq = sorted(range(g.num_labels), key=lambda l: (-g.n_label[l], g.label_names[l]))
        allowed = set(by_freq[:label_cap])

    node_label_lists: list[tuple[int, ...]] = [
        tuple(l for l in sorted(ls) if allowed is None or l in allowed) for ls in g.node_labels
    ]
    nl = g.num_labels
    builders: dict[tuple[int, int, int, int], _Builder] = {}

    for eid, (s, p, o) in enumerate(g.distinct_edges):
        s_labels = node_label_lists[s]
        o_labels = node_label_lists[o]
        if not s_labels or not o_labels:
            continue
        for ls in s_labels:
            for lo in o_labels:
                key = (ls, p, OUT, lo)
                b = builders.get(key)
                if b is None:
                    b = builders[key] = _Builder()
                b.start_matches[s] = b.start_matches.get(s, 0) + 1
                b.edge_ids.add(eid)
                b.label_codes.add(o * nl + lo)

                key = (lo, p, IN, ls)
                b = builders.get(key)
                if b is None:
                    b = builders[key] = _Builder()
                b.start_matches[o] = b.start_matches.get(o, 0) + 1
                b.edge_ids.add(eid)
                b.label_codes.add(s * nl + ls)

    log_v = math.log2(g.num_nodes) if g.num_nodes else 0.0
    cands: dict[tuple[int, int, int, int], Candidate] = {}
    for (root, p, direction, child), b in builders.items():
        rule = atomic(root, p, direction, child)
        traversal = sum(
            log_v + encoding.log_binomial(g.num_nodes - 1, m) for m in b.start_matches.values()
        )
        cands[(root, p, direction, child)] = Candidate(
            rule=rule,
            root_key=_root_key(rule, g),
            canon_key=_canon_key(rule, g),
            correct_starts=set(b.start_matches),
            num_assertions=g.n_label[root],
            per_start_matches=b.start_matches,
            covered_edge_ids=b.edge_ids,
            covered_label_codes=b.label_codes,
            rule_bits=encoding.rule_cost(rule, g),
            traversal_bits=traversal,
        )

    for (root, p, direction, child), cand in cands.items():
        if cand.reverse_partner is None:
            partner = cands[(child, p, OUT if direction == IN else IN, root)]
            cand.reverse_partner = partner
            partner.reverse_partner = cand
    return list(cands.values())


# -- qualification -------------------------------------------------------


def qualify(c: Candidate, g: KnowledgeGraph) -> Candidate:
    """Strengthen the root to the label intersection of the correct starts when
    that does not increase the single-rule cost.  Coverage and correct starts
    are unchanged, so only the rule and exception-partition bits compete."""
    if not c.correct_starts:
        return c
    shared: set[int] | None = None
    root = c.rule.root_labels
    for s in c.correct_starts:
        labels = g.node_labels[s]
        shared = set(labels) if shared is None else shared & labels
        if len(shared) == len(root):
            return c  # nothing beyond the root is shared
    assert shared is not None
    if not (root < shared):
        return c
    new_assertions = len(g.nodes_with_labels(shared))
    new_rule = canonicalize(Rule(frozenset(shared), c.rule.children))
    new_rule_bits = encoding.rule_cost(new_rule, g)
    old_bits = c.rule_bits + encoding.assertion_overhead(c.num_assertions, c.num_exceptions)
    new_bits = new_rule_bits + encoding.assertion_overhead(
        new_assertions, new_assertions - len(c.correct_starts)
    )
    if new_bits <= old_bits:
        c.rule = new_rule
        c.rule_bits = new_rule_bits
        c.num_assertions = new_assertions
        c.root_key = _root_key(new_rule, g)
        c.canon_key = _canon_key(new_rule, g)
    return c


def qualify_all(cands: list[Candidate], g: KnowledgeGraph) -> list[Candidate]:
    """Qualify every candidate, then drop structural duplicates (first kept)."""
    for c in cands:
        qualify(c, g)
    kept: dict[tuple, Candidate] = {}
    for c in cands:
        kept.setdefault(c.canon_key, c)
    result = list(kept.values())
    for c in result:
        if c.reverse_partner is not None:
            c.reverse_partner = kept[c.reverse_partner.canon_key]
    return result


# -- ranking and selection ------------------------------------------------


def rank(cands: list[Candidate], g: KnowledgeGraph) -> list[Candidate]:
    """Descending error reduction against the empty model; ties by correct
    assertion count, then root label strings, then full structure."""
    err0 = encoding.error_cost_counts(g, 0, 0)
    usable = [c for c in cands if c.num_assertions >= 1 and c.correct_starts]
    for c in usable:
        c.gain = err0 - encoding.error_cost_counts(
            g, len(c.covered_label_codes), len(c.covered_edge_ids)
        )
    return sorted(usable, key=lambda c: (-c.gain, -c.num_correct, c.root_key, c.canon_key))


def empty_model(g: KnowledgeGraph) -> Model:
    total = encoding.model_constant(g) + encoding.error_cost_counts(g, 0, 0)
    return Model(graph=g, total=total, history=[("init", "", 0.0, total)])


def select(g: KnowledgeGraph, ranked: list[Candidate], max_passes: int = 3) -> Model:
    """Multi-pass greedy scan: add a rule whenever it strictly lowers the total
    cost, considering reverse orientations together and keeping the cheaper."""
    if max_passes < 1:
        raise ConfigError(f"max_passes must be >= 1, got {max_passes}")
    model = empty_model(g)
    constant = encoding.model_constant(g)

    def eval_total(c: Candidate) -> float:
        new_edges = sum(1 for e in c.covered_edge_ids if e not in model.edge_refs)
        new_labels = sum(1 for l in c.covered_label_codes if l not in model.label_refs)
        err = encoding.error_cost_counts(
            g,
            model.num_modeled_labels + new_labels,
            model.num_modeled_edges + new_edges,
        )
        return constant + model.rule_and_assertion_bits + c.model_bits + err

    for _ in range(max_passes):
        added_any = False
        for cand in ranked:
            if cand.selected:
                continue
            choice, choice_total = cand, eval_total(cand)
            partner = cand.reverse_partner
            if partner is not None and partner is not cand and not partner.selected:
                partner_total = eval_total(partner)
                if partner_total < choice_total:
                    choice, choice_total = partner, partner_total
            if choice_total < model.total:
                choice.selected = True
                model.entries.append(entry_from_candidate(choice, g))
                model._cov_add(choice.covered_edge_ids, choice.covered_label_codes)
                model.record("select", rule_text(choice.rule, g), choice_total)
                added_any = True
        if not added_any:
            break
    return model


def build_model(g: KnowledgeGraph, rules: Iterable[Rule], phase: str = "load") -> Model:
    """Cost an explicit rule list (used by baselines and model files)."""
    model = empty_model(g)
    constant = encoding.model_constant(g)
    for rule in rules:
        entry = entry_from_rule(canonicalize(rule), g)
        model.entries.append(entry)
        model._cov_add(entry.covered_edge_ids, entry.covered_label_codes)
        err = encoding.error_cost_counts(g, model.num_modeled_labels, model.num_modeled_edges)
        model.record(phase, rule_text(rule, g), constant + model.rule_and_assertion_bits + err)
    return model


# -- refinements ----------------------------------------------------------


def _dedup_children(children: Iterable[Child]) -> tuple[Child, ...]:
    seen: list[Child] = []
    for c in children:
        if c not in seen:
            seen.append(c)
    return tuple(seen)


def refine_merge(model: Model, g: KnowledgeGraph) -> Model:
    """Rm: fuse rules with identical roots and identical correct-start sets
    into one multi-child rule, kept when the total cost does not increase.
    Coverage is unchanged by construction, so only model bits compete."""
    constant = encoding.model_constant(g)
    groups: dict[tuple[frozenset[int], frozenset[int]], list[RuleEntry]] = {}
    for e in model.entries:
        groups.setdefault((e.rule.root_labels, e.correct_starts), []).append(e)

    for key, parts in groups.items():  # insertion order: first member's position
        if len(parts) < 2:
            continue
        merged_rule = canonicalize(
            Rule(key[0], _dedup_children(c for e in parts for c in e.rule.children))
        )
        merged = entry_from_rule(merged_rule, g)
        for e in parts:
            model._cov_remove(e.covered_edge_ids, e.covered_label_codes)
        model._cov_add(merged.covered_edge_ids, merged.covered_label_codes)
        kept_bits = model.rule_and_assertion_bits - sum(e.model_bits for e in parts)
        err = encoding.error_cost_counts(g, model.num_modeled_labels, model.num_modeled_edges)
        new_total = constant + kept_bits + merged.model_bits + err
        if new_total <= model.total:
            positions = [i for i, e in enumerate(model.entries) if any(e is p for p in parts)]
            model.entries[positions[0]] = merged
            for i in reversed(positions[1:]):
                del model.entries[i]
            model.record("merge", rule_text(merged_rule, g), new_total)
        else:
            model._cov_remove(merged.covered_edge_ids, merged.covered_label_codes)
            for e in parts:
                model._cov_add(e.covered_edge_ids, e.covered_label_codes)
    return model


def _nest_rule(rule: Rule, path: tuple[int, ...], inner: Rule) -> Rule:
    if not path:
        return Rule(rule.root_labels, _dedup_children(rule.children + inner.children))
    i = path[0]
    c = rule.children[i]
    children = list(rule.children)
    children[i] = Child(c.predicate, c.direction, _nest_rule(c.child, path[1:], inner))
    return Rule(rule.root_labels, tuple(children))


def refine_nest(model: Model, g: KnowledgeGraph) -> Model:
    """Rn: nest one rule beneath a label-matching inner node of another,
    trying pairs in descending Jaccard fit of the occupying node sets, keeping
    a composition only when it strictly lowers the total cost."""
    constant = encoding.model_constant(g)
    occupancy_cache: dict[tuple[tuple, tuple[int, ...]], frozenset[int]] = {}

    def occupancy(entry: RuleEntry, path: tuple[int, ...]) -> frozenset[int]:
        key = (entry.canon_key, path)
        hit = occupancy_cache.get(key)
        if hit is not None:
            return hit
        nodes: set[int] = set(entry.correct_starts)
        rule = entry.rule
        for i in path:
            child = rule.children[i]
            nxt: set[int] = set()
            for u in nodes:
                nxt.update(matching_neighbors(g, u, child))
            nodes = nxt
            rule = child.child
        result = frozenset(nodes)
        occupancy_cache[key] = result
        return result

    while True:
        pairs = []
        for i, e_in in enumerate(model.entries):
            for path, node in iter_positions(e_in.rule):
                if not path:
                    continue
                for j, e_rt in enumerate(model.entries):
                    if i == j or node.root_labels != e_rt.rule.root_labels:
                        continue
                    occ = occupancy(e_in, path)
                    union = occ | e_rt.correct_starts
                    jac = (len(occ & e_rt.correct_starts) / len(union)) if union else 0.0
                    pairs.append((-jac, e_in.canon_key, path, e_rt.canon_key, i, j))
        pairs.sort()

        composed_any = False
        for _, _, path, _, i, j in pairs:
            e_in, e_rt = model.entries[i], model.entries[j]
            composed_rule = canonicalize(_nest_rule(e_in.rule, path, e_rt.rule))
            composed = entry_from_rule(composed_rule, g)
            model._cov_remove(e_in.covered_edge_ids, e_in.covered_label_codes)
            model._cov_remove(e_rt.covered_edge_ids, e_rt.covered_label_codes)
            model._cov_add(composed.covered_edge_ids, composed.covered_label_codes)
            kept_bits = model.rule_and_assertion_bits - e_in.model_bits - e_rt.model_bits
            err = encoding.error_cost_counts(g, model.num_modeled_labels, model.num_modeled_edges)
            new_total = constant + kept_bits + composed.model_bits + err
            if new_total < model.total:
                keep, drop = min(i, j), max(i, j)
                model.entries[keep] = composed
                del model.entries[drop]
                model.record("nest", rule_text(composed_rule, g), new_total)
                composed_any = True
                break
            model._cov_remove(composed.covered_edge_ids, composed.covered_label_codes)
            model._cov_add(e_in.covered_edge_ids, e_in.covered_label_codes)
            model._cov_add(e_rt.covered_edge_ids, e_rt.covered_label_codes)
        if not composed_any:
            break
    return model


# -- pipeline -------------------------------------------------------------

REFINE_MODES = ("none", "merge", "nest")


def summarize(
    g: KnowledgeGraph,
    refine: str = "nest",
    max_passes: int = 3,
    label_cap: int | None = None,
    log: Callable[[str], None] | None = None,
) -> Model:
    """Run the full pipeline; ``refine='nest'`` implies merging first."""
    if refine not in REFINE_MODES:
        raise ConfigError(f"refine must be one of {REFINE_MODES}, got {refine!r}")

    def phase(name: str, fn):
        start = time.perf_counter()
        result = fn()
        if log:
            log(f"{name}: {time.perf_counter() - start:.2f}s")
        return result

    cands = phase("generate", lambda: generate_candidates(g, label_cap=label_cap))
    cands = phase("qualify", lambda: qualify_all(cands, g))
    ranked = phase("rank", lambda: rank(cands, g))
    model = phase("select", lambda: select(g, ranked, max_passes=max_passes))
    if refine in ("merge", "nest"):
        model = phase("refine_merge", lambda: refine_merge(model, g))
    if refine == "nest":
        model = phase("refine_nest", lambda: refine_nest(model, g))
    return model


# -- model files ----------------------------------------------------------


def model_to_dict(model: Model) -> dict:
    g = model.graph
    constant = encoding.model_constant(g)
    model_bits = constant + model.rule_and_assertion_bits
    err_bits = encoding.error_cost_counts(g, model.num_modeled_labels, model.num_modeled_edges)
    total = model_bits + err_bits
    empty_total = constant + encoding.error_cost_counts(g, 0, 0)
    pct_bits = (100.0 * total / empty_total) if empty_total > 0 else 100.0
    pct_edges = (
        100.0 * model.num_modeled_edges / g.num_distinct_edges if g.num_distinct_edges else 0.0
    )
    return {
        "rules": [
            {
                "rule": rule_to_dict(e.rule, g),
                "L_rule_bits": e.rule_bits,
                "L_assertions_bits": e.assertion_bits,
                "num_correct": e.num_correct,
                "num_exceptions": e.num_exceptions,
            }
            for e in model.entries
        ],
        "L_model_bits": model_bits,
        "L_error_bits": err_bits,
        "L_total_bits": total,
        "pct_bits_vs_empty": pct_bits,
        "pct_edges_explained": pct_edges,
    }


def model_from_dict(data: dict, g: KnowledgeGraph) -> Model:
    """Rebuild a model on ``g`` from a serialized rule list (costs recomputed)."""
    rules = [rule_from_dict(entry["rule"], g) for entry in data.get("rules", [])]
    return build_model(g, rules)
