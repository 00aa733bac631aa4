"""Anomaly scores derived from a mined model.

A node's score is its share of the exception-id bits of every applicable rule
it violates.  An edge's score adds its endpoints' scores to a uniform share of
the unmodeled-edge transmission cost when the edge is not explained by the
model; edges outside the graph are unexplained by definition.
"""

from __future__ import annotations

from . import encoding
from .miner import Model
from .rules import Rule


class UnknownNodeError(KeyError):
    """A score was requested for a node id the graph does not contain."""


def rule_applicability(model: Model) -> dict[int, list[Rule]]:
    """r(v): map each node to the model rules whose root labels it carries.
    Nodes to which no rule applies are absent from the mapping."""
    out: dict[int, list[Rule]] = {}
    for entry in model.entries:
        for v in sorted(model.graph.nodes_with_labels(entry.rule.root_labels)):
            out.setdefault(v, []).append(entry.rule)
    return out


class AnomalyScorer:
    """Precomputed score tables for one (graph, model) pair."""

    def __init__(self, model: Model):
        self.model = model
        g = model.graph
        self._node_bits: dict[int, float] = {}
        for entry in model.entries:
            if not entry.exception_starts:
                continue
            share = (
                encoding.log_binomial(entry.num_assertions, entry.num_exceptions)
                / entry.num_exceptions
            )
            for v in entry.exception_starts:
                self._node_bits[v] = self._node_bits.get(v, 0.0) + share
        unmodeled = g.num_distinct_edges - model.num_modeled_edges
        if unmodeled > 0:
            self._edge_share = (
                encoding.log_binomial(
                    g.universe_edges - model.num_modeled_edges, unmodeled
                )
                / unmodeled
            )
        else:
            self._edge_share = 0.0

    @property
    def unmodeled_edge_share(self) -> float:
        return self._edge_share

    def node_score(self, v: int) -> float:
        if not 0 <= v < self.model.graph.num_nodes:
            raise UnknownNodeError(v)
        return self._node_bits.get(v, 0.0)

    def edge_score(self, s: int, p: int, o: int) -> float:
        g = self.model.graph
        eid = g.edge_id.get((s, p, o))
        modeled = eid is not None and eid in self.model.edge_refs
        share = 0.0 if modeled else self._edge_share
        return self.node_score(s) + self.node_score(o) + share


def node_score(v: int, model: Model) -> float:
    return AnomalyScorer(model).node_score(v)


def edge_score(s: int, p: int, o: int, model: Model) -> float:
    return AnomalyScorer(model).edge_score(s, p, o)


def rank_edges(
    test_edges: list[tuple[int, int, int]], model: Model
) -> list[tuple[int, int, int, float]]:
    """Score and sort descending; ties keep input order (stable sort)."""
    scorer = AnomalyScorer(model)
    scored = [(s, p, o, scorer.edge_score(s, p, o)) for s, p, o in test_edges]
    return sorted(scored, key=lambda row: -row[3])
