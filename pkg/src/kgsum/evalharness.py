"""Experiment machinery: anomaly injection, PCA node removal, non-MDL baseline
selectors, ranking metrics, and missing-entity recall.

All randomized procedures are deterministic functions of (graph, parameters,
seed); derived random streams are seeded with strings so independent stages
never share state.
"""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass, field

from . import encoding
from .graph import KnowledgeGraph, parse_graph
from .miner import Candidate, Model, empty_model, entry_from_candidate
from .rules import DIRECTION_IDS, DIRECTION_NAMES, IN, OUT

ANOMALY_TYPES = ("a1", "a2", "a3", "a4")
VALIDATION_FRACTION = 0.2


class PerturbationError(ValueError):
    """The requested perturbation cannot be applied to this graph."""


class MetricsError(ValueError):
    """Metrics are undefined for the given ranking/truth combination."""


@dataclass(frozen=True)
class PerturbationSpec:
    q: float
    types: tuple[str, ...] = ANOMALY_TYPES
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.q <= 1.0:
            raise PerturbationError(f"q must be in (0, 1], got {self.q}")
        bad = [t for t in self.types if t not in ANOMALY_TYPES]
        if bad or not self.types:
            raise PerturbationError(f"anomaly types must be drawn from {ANOMALY_TYPES}, got {self.types}")


@dataclass
class GroundTruth:
    """Labeled outcome of a perturbation or PCA-removal run.

    ``positives``/``negatives`` hold edge records (external names) with a
    val/test split tag; ``removed`` holds per-removed-node records with the
    assertions their removal destroyed at surviving neighbors.
    """

    kind: str
    q: float
    seed: int
    types: tuple[str, ...] = ()
    positives: list[dict] = field(default_factory=list)
    negatives: list[dict] = field(default_factory=list)
    removed: list[dict] = field(default_factory=list)

    def positive_types(self) -> dict[tuple[str, str, str], tuple[str, ...]]:
        return {(r["s"], r["p"], r["o"]): tuple(r["types"]) for r in self.positives}

    def clean_triples(self) -> set[tuple[str, str, str]]:
        return {(r["s"], r["p"], r["o"]) for r in self.negatives}

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "q": self.q, "seed": self.seed}
        if self.kind == "perturbation":
            out["types"] = list(self.types)
            out["positives"] = self.positives
            out["negatives"] = self.negatives
        else:
            out["removed"] = self.removed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            kind=data["kind"],
            q=data["q"],
            seed=data["seed"],
            types=tuple(data.get("types", ())),
            positives=list(data.get("positives", ())),
            negatives=list(data.get("negatives", ())),
            removed=list(data.get("removed", ())),
        )


def _sample_count(q: float, num_nodes: int) -> int:
    if q * num_nodes < 1:
        raise PerturbationError(f"q={q} samples less than one of {num_nodes} nodes")
    return math.ceil(q * num_nodes)


def _assign_splits(count: int, seed: int, stream: str) -> list[str]:
    order = list(range(count))
    random.Random(f"{seed}:{stream}").shuffle(order)
    n_val = int(VALIDATION_FRACTION * count)
    val = set(order[:n_val])
    return ["val" if i in val else "test" for i in range(count)]


def _rebuild(g: KnowledgeGraph, triples: list[tuple[int, int, int]], labels: list[set[int]]) -> KnowledgeGraph:
    tl = (f"{g.node_names[s]}\t{g.pred_names[p]}\t{g.node_names[o]}\n" for s, p, o in triples)
    ll = (
        f"{g.node_names[v]}\t{name}\n"
        for v in range(g.num_nodes)
        if labels[v]
        for name in sorted(g.label_names[l] for l in labels[v])
    )
    return parse_graph(tl, ll, triple_source="<perturbed>", label_source="<perturbed>")


def perturb(g: KnowledgeGraph, spec: PerturbationSpec) -> tuple[KnowledgeGraph, GroundTruth]:
    """Inject the requested anomaly types, each hitting an independent uniform
    sample of ceil(q*|V|) nodes, and record ground truth with an equal-size
    clean-edge sample and a val/test split."""
    if g.num_nodes == 0:
        raise PerturbationError("cannot perturb an empty graph")
    n_sample = _sample_count(spec.q, g.num_nodes)
    rng = random.Random(f"{spec.seed}:perturb")

    labels = [set(s) for s in g.node_labels]
    triples = list(g.edges)
    incident: dict[int, set[tuple[int, int, int]]] = {}
    for t in g.distinct_edges:
        incident.setdefault(t[0], set()).add(t)
        incident.setdefault(t[2], set()).add(t)

    perturbed: dict[tuple[int, int, int], list[str]] = {}

    def mark(triple: tuple[int, int, int], atype: str) -> None:
        types = perturbed.setdefault(triple, [])
        if atype not in types:
            types.append(atype)

    def mark_incident(v: int, atype: str) -> None:
        for t in sorted(incident.get(v, ())):
            mark(t, atype)

    for atype in ANOMALY_TYPES:
        if atype not in spec.types:
            continue
        if atype == "a1":
            pool = [v for v in range(g.num_nodes) if len(labels[v]) >= 2]
            if not pool:
                raise PerturbationError("a1 requires nodes with more than one label")
            if len(pool) < n_sample:
                warnings.warn(f"a1: only {len(pool)} multi-label nodes for a sample of {n_sample}")
            chosen = rng.sample(pool, min(n_sample, len(pool)))
        else:
            chosen = rng.sample(range(g.num_nodes), n_sample)

        for v in chosen:
            if atype == "a1":
                labels[v].discard(rng.choice(sorted(labels[v])))
                mark_incident(v, atype)
            elif atype == "a2":
                absent = sorted(set(range(g.num_labels)) - labels[v])
                if not absent:
                    continue
                labels[v].add(rng.choice(absent))
                mark_incident(v, atype)
            elif atype == "a3":
                if g.num_preds == 0:
                    raise PerturbationError("a3 requires a graph with at least one predicate")
                for _ in range(rng.randint(1, 2)):
                    p = rng.randrange(g.num_preds)
                    dest = rng.randrange(g.num_nodes)
                    triple = (v, p, dest)
                    triples.append(triple)
                    incident.setdefault(v, set()).add(triple)
                    incident.setdefault(dest, set()).add(triple)
                    mark(triple, atype)
            else:  # a4
                if not labels[v]:
                    continue
                absent = sorted(set(range(g.num_labels)) - labels[v])
                if not absent:
                    continue
                # sample the replacement from the pre-removal complement so the
                # swap can never reinstate the label it just dropped
                labels[v].discard(rng.choice(sorted(labels[v])))
                labels[v].add(rng.choice(absent))
                mark_incident(v, atype)

    clean_pool = [t for t in g.distinct_edges if t not in perturbed]
    n_neg = min(len(perturbed), len(clean_pool))
    if n_neg < len(perturbed):
        warnings.warn(f"only {n_neg} clean edges available for {len(perturbed)} positives")
    negatives = random.Random(f"{spec.seed}:negatives").sample(clean_pool, n_neg)

    def name(t: tuple[int, int, int]) -> tuple[str, str, str]:
        return g.node_names[t[0]], g.pred_names[t[1]], g.node_names[t[2]]

    splits = _assign_splits(len(perturbed) + len(negatives), spec.seed, "split")
    truth = GroundTruth(kind="perturbation", q=spec.q, seed=spec.seed, types=spec.types)
    for i, (t, types) in enumerate(perturbed.items()):
        s, p, o = name(t)
        truth.positives.append({"s": s, "p": p, "o": o, "types": sorted(types), "split": splits[i]})
    for i, t in enumerate(negatives):
        s, p, o = name(t)
        truth.negatives.append({"s": s, "p": p, "o": o, "split": splits[len(perturbed) + i]})

    return _rebuild(g, triples, labels), truth


def evaluation_edges(truth: GroundTruth) -> list[tuple[str, str, str]]:
    """Test-split edges in a deterministically shuffled order (so that score
    ties never correlate with the ground-truth labels)."""
    rows = [(r["s"], r["p"], r["o"]) for r in truth.positives if r["split"] == "test"]
    rows += [(r["s"], r["p"], r["o"]) for r in truth.negatives if r["split"] == "test"]
    random.Random(f"{truth.seed}:test-order").shuffle(rows)
    return rows


def remove_nodes_pca(
    g: KnowledgeGraph, q: float, seed: int = 0
) -> tuple[KnowledgeGraph, GroundTruth]:
    """Remove ceil(q*|V|) nodes with their incident edges; then, for every
    surviving neighbor that lost an edge of some (predicate, direction), drop
    all its remaining edges of that kind (partial completeness)."""
    if not 0.0 < q <= 1.0:
        raise PerturbationError(f"q must be in (0, 1], got {q}")
    if g.num_nodes == 0:
        raise PerturbationError("cannot remove nodes from an empty graph")
    n_sample = _sample_count(q, g.num_nodes)
    rng = random.Random(f"{seed}:pca")
    removed_ids = sorted(rng.sample(range(g.num_nodes), n_sample))
    removed = set(removed_ids)

    destroyed: dict[int, set[tuple[int, int, int]]] = {x: set() for x in removed_ids}
    affected: set[tuple[int, int, int]] = set()  # (survivor, predicate, direction)
    for s, p, o in g.distinct_edges:
        s_gone, o_gone = s in removed, o in removed
        if s_gone and o_gone:
            continue
        if o_gone and not s_gone:
            destroyed[o].add((s, p, OUT))
            affected.add((s, p, OUT))
        elif s_gone and not o_gone:
            destroyed[s].add((o, p, IN))
            affected.add((o, p, IN))

    triples = [
        (s, p, o)
        for s, p, o in g.edges
        if s not in removed
        and o not in removed
        and (s, p, OUT) not in affected
        and (o, p, IN) not in affected
    ]
    labels = [set(ls) if v not in removed else set() for v, ls in enumerate(g.node_labels)]

    splits = _assign_splits(len(removed_ids), seed, "pca-split")
    truth = GroundTruth(kind="pca_removal", q=q, seed=seed)
    for i, x in enumerate(removed_ids):
        truth.removed.append(
            {
                "node": g.node_names[x],
                "labels": sorted(g.label_names[l] for l in g.node_labels[x]),
                "split": splits[i],
                "destroyed": [
                    {
                        "survivor": g.node_names[u],
                        "predicate": g.pred_names[p],
                        "direction": DIRECTION_NAMES[d],
                    }
                    for u, p, d in sorted(destroyed[x])
                ],
            }
        )
    return _rebuild(g, triples, labels), truth


# -- baseline selectors ----------------------------------------------------


def _baseline_select(cands: list[Candidate], g: KnowledgeGraph, k: int, keyfn, phase: str) -> Model:
    if k < 1:
        raise PerturbationError(f"top-k must be >= 1, got {k}")
    order = sorted((c for c in cands if c.correct_starts), key=keyfn)
    model = empty_model(g)
    constant = encoding.model_constant(g)
    for c in order[:k]:
        entry = entry_from_candidate(c, g)
        model.entries.append(entry)
        model._cov_add(entry.covered_edge_ids, entry.covered_label_codes)
        err = encoding.error_cost_counts(g, model.num_modeled_labels, model.num_modeled_edges)
        model.record(phase, c.root_key, constant + model.rule_and_assertion_bits + err)
    return model


def freq_select(cands: list[Candidate], g: KnowledgeGraph, k: int) -> Model:
    """Top-k candidates by correct-assertion count, costed with the standard encoding."""
    return _baseline_select(
        cands, g, k, lambda c: (-c.num_correct, c.root_key, c.canon_key), "freq"
    )


def coverage_select(cands: list[Candidate], g: KnowledgeGraph, k: int) -> Model:
    """Top-k candidates by covered-edge count, costed with the standard encoding."""
    return _baseline_select(
        cands, g, k, lambda c: (-len(c.covered_edge_ids), c.root_key, c.canon_key), "coverage"
    )


# -- ranking metrics --------------------------------------------------------


@dataclass
class MetricsReport:
    auc: float
    p_at_100: float
    r_at_100: float
    f1_at_100: float
    num_positives: int
    num_negatives: int
    by_type: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "auc": self.auc,
            "p_at_100": self.p_at_100,
            "r_at_100": self.r_at_100,
            "f1_at_100": self.f1_at_100,
            "num_positives": self.num_positives,
            "num_negatives": self.num_negatives,
        }
        if self.by_type:
            out["by_type"] = {t: r.to_dict() for t, r in self.by_type.items()}
        return out


def _ranking_rows(
    ranking: list[tuple[str, str, str, float]],
    truth: GroundTruth,
    anomaly_filter: str | None,
) -> tuple[list[float], list[int]]:
    pos_types = truth.positive_types()
    clean = truth.clean_triples()
    scores: list[float] = []
    labels: list[int] = []
    for s, p, o, score in ranking:
        t = (s, p, o)
        types = pos_types.get(t)
        if types is None and t not in clean:
            raise MetricsError(f"ranked edge {t} is neither perturbed nor clean in the truth")
        if anomaly_filter is not None and types is not None and anomaly_filter not in types:
            continue  # perturbed by another type: excluded from this filter
        scores.append(score)
        labels.append(1 if types is not None else 0)
    return scores, labels


def _auc_with_ties(scores: list[float], labels: list[int]) -> float:
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs at least one positive and one negative")
    by_score = sorted(zip(scores, labels))  # ascending predicted score
    rank_sum = 0.0
    i = 0
    while i < len(by_score):
        j = i
        while j < len(by_score) and by_score[j][0] == by_score[i][0]:
            j += 1
        avg_rank = (i + 1 + j) / 2.0  # average of ranks i+1 .. j
        rank_sum += avg_rank * sum(lab for _, lab in by_score[i:j])
        i = j
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _precision_recall_at_k(scores: list[float], labels: list[int], k: int) -> tuple[float, float, float]:
    order = sorted(range(len(scores)), key=lambda i: -scores[i])  # stable
    n = len(order)
    k_eff = min(k, n)
    if n > k:
        boundary = scores[order[k - 1]]
        while k_eff < n and scores[order[k_eff]] == boundary:
            k_eff += 1
    tp = sum(labels[i] for i in order[:k_eff])
    n_pos = sum(labels)
    precision = tp / k_eff if k_eff else 0.0
    recall = tp / n_pos if n_pos else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return precision, recall, f1


def metrics(
    ranking: list[tuple[str, str, str, float]],
    truth: GroundTruth,
    anomaly_filter: str | None = None,
    k: int = 100,
) -> MetricsReport:
    """AUC over reciprocal ranks plus precision/recall/F1@k with tie extension.

    With a type filter, edges perturbed by other types are dropped from the
    ranking first so they are never counted as false negatives.
    """
    scores, labels = _ranking_rows(ranking, truth, anomaly_filter)
    if not scores:
        raise MetricsError("empty ranking after filtering")
    auc = _auc_with_ties(scores, labels)
    precision, recall, f1 = _precision_recall_at_k(scores, labels, k)
    report = MetricsReport(
        auc=auc,
        p_at_100=precision,
        r_at_100=recall,
        f1_at_100=f1,
        num_positives=sum(labels),
        num_negatives=len(labels) - sum(labels),
    )
    if anomaly_filter is None:
        seen_types = sorted({t for r in truth.positives for t in r["types"]})
        if len(seen_types) > 1:
            for t in seen_types:
                report.by_type[t] = metrics(ranking, truth, anomaly_filter=t, k=k)
    return report


# -- missing-entity recall ----------------------------------------------------


def completeness_eval(model: Model, truth: GroundTruth, split: str = "test") -> tuple[float, float]:
    """Fraction of removed nodes whose destroyed assertions some rule re-asserts
    at a surviving exception node; the label-strict variant also requires the
    asserting child's labels to hold on the removed endpoint."""
    if truth.kind != "pca_removal":
        raise MetricsError(f"completeness_eval needs pca_removal truth, got {truth.kind!r}")
    g = model.graph
    exception_entries: dict[int, list] = {}
    for entry in model.entries:
        for v in entry.exception_starts:
            exception_entries.setdefault(v, []).append(entry)

    records = [r for r in truth.removed if r["split"] == split]
    if not records:
        return 0.0, 0.0
    hits = 0
    label_hits = 0
    for rec in records:
        removed_labels = set(rec["labels"])
        recovered = False
        recovered_label = False
        for d in rec["destroyed"]:
            sid = g.node_id(d["survivor"])
            pid = g.pred_id(d["predicate"])
            direction = DIRECTION_IDS[d["direction"]]
            if sid is None or pid is None:
                continue
            for entry in exception_entries.get(sid, ()):
                for child in entry.rule.children:
                    if child.predicate != pid or child.direction != direction:
                        continue
                    recovered = True
                    child_labels = {g.label_names[l] for l in child.child.root_labels}
                    if child_labels <= removed_labels:
                        recovered_label = True
            if recovered_label:
                break
        hits += recovered
        label_hits += recovered_label
    return hits / len(records), label_hits / len(records)
