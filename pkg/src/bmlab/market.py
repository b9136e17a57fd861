"""Market structure: the query-keyword graph, traffic and matching
distributions, slot weights, advertiser valuations, and the scenario
bundle that the mechanisms operate on.

All probability masses are validated to within PROB_TOL; ids are opaque
strings interned to dense indices in input order (advertisers are kept
sorted so index order agrees with the lexicographic tie-break used by
the auctions).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import (
    EmptyNeighborhood,
    MassNotOne,
    NonMonotoneWeights,
    NoPositiveAdvertiser,
    SupportMismatch,
    ValidationError,
)

PROB_TOL = 1e-12


class BipartiteGraph:
    """Query-keyword bipartite graph with neighborhood lookups.

    With strict=True (the default) every vertex must touch at least one
    edge.  Corpus-derived subgraphs relax this with strict=False.
    """

    def __init__(self, queries, keywords, edges, strict=True):
        self.queries = tuple(dict.fromkeys(queries))
        self.keywords = tuple(dict.fromkeys(keywords))
        qset, sset = set(self.queries), set(self.keywords)
        if strict and qset & sset:
            # auction scenarios key lookups by name across both sides;
            # corpus graphs legitimately repeat a string as query and keyword
            raise ValidationError(f"ids used on both sides: {sorted(qset & sset)!r}")
        seen = set()
        for q, s in edges:
            if q not in qset:
                raise ValidationError(f"edge endpoint {q!r} is not a declared query")
            if s not in sset:
                raise ValidationError(f"edge endpoint {s!r} is not a declared keyword")
            seen.add((q, s))
        self.edges = frozenset(seen)
        q_nbrs = {q: [] for q in self.queries}
        s_nbrs = {s: [] for s in self.keywords}
        for q in self.queries:
            for s in self.keywords:
                if (q, s) in self.edges:
                    q_nbrs[q].append(s)
                    s_nbrs[s].append(q)
        self._q_nbrs = {q: tuple(v) for q, v in q_nbrs.items()}
        self._s_nbrs = {s: tuple(v) for s, v in s_nbrs.items()}
        if strict:
            for q in self.queries:
                if not self._q_nbrs[q]:
                    raise EmptyNeighborhood(q)
            for s in self.keywords:
                if not self._s_nbrs[s]:
                    raise EmptyNeighborhood(s)

    def query_neighbors(self, q):
        return self._q_nbrs[q]

    def keyword_neighbors(self, s):
        return self._s_nbrs[s]

    def has_edge(self, q, s):
        return (q, s) in self.edges

    def max_degree(self):
        degs = [len(v) for v in self._q_nbrs.values()]
        degs += [len(v) for v in self._s_nbrs.values()]
        return max(degs) if degs else 0


class QueryDistribution:
    """Strictly positive probability masses over queries, summing to 1."""

    def __init__(self, weights: Mapping[str, float]):
        self._mass = {q: float(m) for q, m in weights.items()}
        for q, m in self._mass.items():
            if not m > 0.0:
                raise ValidationError(f"query {q!r} has non-positive mass {m!r}")
        total = math.fsum(self._mass.values())
        if abs(total - 1.0) > PROB_TOL:
            raise MassNotOne("query distribution", total)

    def mass(self, q):
        return self._mass[q]

    @property
    def queries(self):
        return tuple(self._mass)

    def items(self):
        return self._mass.items()


class MatchingPolicy:
    """Per-query keyword-sampling distributions pi_q over N(q)."""

    def __init__(self, table: Mapping[str, Mapping[str, float]]):
        self._table = {q: {s: float(m) for s, m in row.items()} for q, row in table.items()}
        for q, row in self._table.items():
            for s, m in row.items():
                if not m > 0.0:
                    raise ValidationError(f"matching mass for ({q!r}, {s!r}) is non-positive")
            total = math.fsum(row.values())
            if abs(total - 1.0) > PROB_TOL:
                raise MassNotOne(f"matching of query {q!r}", total)

    def mass(self, q, s):
        return self._table[q].get(s, 0.0)

    def support(self, q):
        return tuple(self._table[q])

    @property
    def queries(self):
        return tuple(self._table)


class SlotWeights:
    """Nonincreasing click probabilities per slot; positions past the
    end of the vector carry weight 0."""

    def __init__(self, w: Sequence[float]):
        vec = tuple(float(x) for x in w)
        if not vec:
            raise ValidationError("slot weights must be non-empty")
        for k, x in enumerate(vec):
            if not (0.0 <= x <= 1.0):
                raise ValidationError(f"slot weight at position {k + 1} is outside [0, 1]")
            if k and x > vec[k - 1]:
                raise NonMonotoneWeights(k + 1)
        self._w = vec

    def weight(self, k):
        """Click probability of 0-indexed position k."""
        return self._w[k] if 0 <= k < len(self._w) else 0.0

    def as_tuple(self):
        return self._w

    def __len__(self):
        return len(self._w)

    @property
    def is_single_slot(self):
        return all(x == 0.0 for x in self._w[1:])


class ValuationProfile:
    """Sparse nonnegative per-click values v_i^q, advertisers sorted by id."""

    def __init__(self, values: Mapping[str, Mapping[str, float]]):
        self._values = {}
        for i in sorted(values):
            row = {}
            for q, v in values[i].items():
                v = float(v)
                if v < 0.0:
                    raise ValidationError(f"valuation of {i!r} on {q!r} is negative")
                if v > 0.0:
                    row[q] = v
            self._values[i] = row
        self.advertisers = tuple(self._values)

    def value(self, advertiser, query):
        return self._values[advertiser].get(query, 0.0)

    def positive_queries(self, advertiser):
        return frozenset(self._values[advertiser])

    def row(self, advertiser):
        return dict(self._values[advertiser])


@dataclass(frozen=True)
class Scenario:
    """A fully specified market instance.  Use build_scenario for the
    validated path; direct construction skips cross-checks (used for
    sampled valuation profiles that may not meet the positivity rule)."""

    graph: BipartiteGraph
    p: QueryDistribution
    pi: MatchingPolicy
    weights: SlotWeights
    valuations: ValuationProfile
    kappa: int

    @property
    def advertisers(self):
        return self.valuations.advertisers


def build_scenario(graph, p, pi, weights, valuations, kappa) -> Scenario:
    """Validate cross-component invariants and assemble a Scenario."""
    if int(kappa) != kappa or kappa < 1:
        raise ValidationError(f"kappa must be a positive integer, got {kappa!r}")
    if set(p.queries) != set(graph.queries):
        missing = set(graph.queries) ^ set(p.queries)
        raise ValidationError(f"query distribution support mismatch on {sorted(missing)!r}")
    if set(pi.queries) != set(graph.queries):
        missing = set(graph.queries) ^ set(pi.queries)
        raise ValidationError(f"matching policy missing/extra queries {sorted(missing)!r}")
    for q in graph.queries:
        if set(pi.support(q)) != set(graph.query_neighbors(q)):
            raise SupportMismatch(q)
    for i in valuations.advertisers:
        extra = valuations.positive_queries(i) - set(graph.queries)
        if extra:
            raise ValidationError(f"advertiser {i!r} values unknown queries {sorted(extra)!r}")
    for q in graph.queries:
        if not any(valuations.value(i, q) > 0.0 for i in valuations.advertisers):
            raise NoPositiveAdvertiser(q)
    return Scenario(graph, p, pi, weights, valuations, int(kappa))


_SCENARIO_KEYS = {"queries", "keywords", "edges", "query_dist", "matching",
                  "slot_weights", "valuations", "kappa"}


def scenario_from_json(source) -> Scenario:
    """Load a scenario from a JSON file path or an already-parsed dict.

    Unknown top-level keys are rejected so typos fail loudly.
    """
    obj = _load_json_obj(source, "scenario")
    unknown = set(obj) - _SCENARIO_KEYS
    if unknown:
        raise ValidationError(f"unknown scenario key(s): {sorted(unknown)!r}")
    missing = _SCENARIO_KEYS - set(obj)
    if missing:
        raise ValidationError(f"scenario is missing key(s): {sorted(missing)!r}")
    try:
        graph = BipartiteGraph(obj["queries"], obj["keywords"],
                               [tuple(e) for e in obj["edges"]])
        p = QueryDistribution(obj["query_dist"])
        pi = MatchingPolicy(obj["matching"])
        weights = SlotWeights(obj["slot_weights"])
        valuations = ValuationProfile(obj["valuations"])
    except (TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed scenario field: {exc}") from exc
    return build_scenario(graph, p, pi, weights, valuations, obj["kappa"])


def _load_json_obj(source, what):
    if isinstance(source, Mapping):
        return dict(source)
    try:
        with open(source, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed {what} JSON in {source}: {exc}") from exc
    except OSError as exc:
        raise ValidationError(f"cannot read {what} file {source}: {exc}") from exc


def keyword_mass(scenario: Scenario, keyword) -> float:
    """Traffic mass of a keyword: sum of P(q)*pi_q(s) over q in N(s)."""
    return math.fsum(scenario.p.mass(q) * scenario.pi.mass(q, keyword)
                     for q in scenario.graph.keyword_neighbors(keyword))


def keyword_value(scenario: Scenario, advertiser, keyword) -> float:
    """Expected per-click value of a keyword for one advertiser.

    This is the traffic-weighted average of the advertiser's query
    values over the keyword's neighborhood; bidding above it is weakly
    dominated, so it is the natural conservative cap.
    """
    num = 0.0
    den = 0.0
    for q in scenario.graph.keyword_neighbors(keyword):
        m = scenario.p.mass(q) * scenario.pi.mass(q, keyword)
        num += m * scenario.valuations.value(advertiser, q)
        den += m
    if den <= 0.0:
        raise ValidationError(f"keyword {keyword!r} has zero traffic mass")
    return num / den


def keyword_values(scenario: Scenario) -> dict:
    """All keyword values as {advertiser: {keyword: value}}."""
    return {i: {s: keyword_value(scenario, i, s) for s in scenario.graph.keywords}
            for i in scenario.advertisers}


def positive_keywords(scenario: Scenario, advertiser) -> frozenset:
    """Keywords whose neighborhood meets the advertiser's positive queries."""
    pos_q = scenario.valuations.positive_queries(advertiser)
    return frozenset(s for s in scenario.graph.keywords
                     if pos_q.intersection(scenario.graph.keyword_neighbors(s)))


def optimal_welfare(scenario: Scenario) -> float:
    """Welfare of the omniscient per-query allocation: for every query,
    the k-th slot goes to the k-th highest per-click value."""
    w = scenario.weights.as_tuple()
    total = 0.0
    for q in scenario.graph.queries:
        vals = sorted((scenario.valuations.value(i, q) for i in scenario.advertisers),
                      reverse=True)
        contrib = sum(wk * v for wk, v in zip(w, vals))
        total += scenario.p.mass(q) * contrib
    return total


class BayesScenario:
    """Scenario skeleton plus independent per-(advertiser, query) value
    distributions.  Missing entries mean the value is identically 0."""

    def __init__(self, graph, p, pi, weights, kappa, value_dists):
        if int(kappa) != kappa or kappa < 1:
            raise ValidationError(f"kappa must be a positive integer, got {kappa!r}")
        self.graph = graph
        self.p = p
        self.pi = pi
        self.weights = weights
        self.kappa = int(kappa)
        self.value_dists = {i: dict(row) for i, row in sorted(value_dists.items())}
        self.advertisers = tuple(self.value_dists)
        for i, row in self.value_dists.items():
            for q, dist in row.items():
                if q not in set(graph.queries):
                    raise ValidationError(f"distribution for unknown query {q!r}")
                lo, _ = dist.support
                if lo < 0.0:
                    raise ValidationError(
                        f"value distribution of {i!r} on {q!r} allows negative values")

    def dist(self, advertiser, query):
        return self.value_dists[advertiser].get(query)

    def sample_valuations(self, rng) -> dict:
        """Draw one valuation profile; independent across (i, q)."""
        out = {}
        for i, row in self.value_dists.items():
            out[i] = {q: float(dist.sample(rng, 1)[0]) for q, dist in row.items()}
        return out

    def to_scenario(self, valuations: Mapping[str, Mapping[str, float]]) -> Scenario:
        """Bind sampled values into a Scenario (no positivity cross-check:
        a draw may legitimately produce zeros)."""
        return Scenario(self.graph, self.p, self.pi, self.weights,
                        ValuationProfile(valuations), self.kappa)
