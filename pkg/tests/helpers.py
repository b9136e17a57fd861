"""Shared test utilities: small scenario builders, random instance
generators, and independent brute-force oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np

from bmlab.market import (
    BipartiteGraph,
    MatchingPolicy,
    QueryDistribution,
    SlotWeights,
    ValuationProfile,
    build_scenario,
)


def simple_scenario(values, weights=(1.0,), kappa=None, p=None, pi=None,
                    edges=None, queries=None, keywords=None):
    """Assemble a scenario from a {advertiser: {query: value}} map with
    sensible defaults: one keyword per query unless told otherwise."""
    if queries is None:
        queries = sorted({q for row in values.values() for q in row})
    if keywords is None:
        keywords = [f"s{k}" for k in range(1, len(queries) + 1)]
    if edges is None:
        edges = list(zip(queries, keywords))
    graph = BipartiteGraph(queries, keywords, edges)
    if p is None:
        p = {q: 1.0 / len(queries) for q in queries}
    if pi is None:
        pi = {q: {s: 1.0 / len(graph.query_neighbors(q)) for s in graph.query_neighbors(q)}
              for q in queries}
    if kappa is None:
        kappa = len(keywords)
    return build_scenario(graph, QueryDistribution(p), MatchingPolicy(pi),
                          SlotWeights(weights), ValuationProfile(values), kappa)


def single_keyword_scenario(values_by_adv, weights=(1.0,), kappa=1):
    """One query 'q', one keyword 's', degenerate matching."""
    vals = {i: {"q": v} for i, v in values_by_adv.items()}
    return simple_scenario(vals, weights=weights, kappa=kappa,
                           queries=["q"], keywords=["s"], edges=[("q", "s")])


def random_scenario(rng, max_adv=3, max_kw=3, max_q=4, weights=(1.0,),
                    kappa=None, all_positive=False, value_hi=5.0):
    """Random validated scenario. With all_positive every (i, q) value is
    strictly positive, which keeps homogeneity finite."""
    n_q = int(rng.integers(1, max_q + 1))
    n_s = int(rng.integers(1, max_kw + 1))
    n_a = int(rng.integers(1, max_adv + 1))
    queries = [f"q{j}" for j in range(n_q)]
    keywords = [f"s{j}" for j in range(n_s)]
    edges = set()
    for q in queries:
        picks = rng.choice(n_s, size=int(rng.integers(1, n_s + 1)), replace=False)
        for j in picks:
            edges.add((q, keywords[j]))
    for s in keywords:
        if not any(e[1] == s for e in edges):
            edges.add((queries[int(rng.integers(n_q))], s))
    p_raw = rng.uniform(0.2, 1.0, size=n_q)
    p = {q: float(x / p_raw.sum()) for q, x in zip(queries, p_raw)}
    graph = BipartiteGraph(queries, keywords, edges)
    pi = {}
    for q in queries:
        nbrs = graph.query_neighbors(q)
        raw = rng.uniform(0.2, 1.0, size=len(nbrs))
        pi[q] = {s: float(x / raw.sum()) for s, x in zip(nbrs, raw)}
    advs = [f"a{j}" for j in range(n_a)]
    values = {}
    for i in advs:
        row = {}
        for q in queries:
            if all_positive or rng.random() < 0.7:
                row[q] = float(np.round(rng.uniform(0.25, value_hi), 3))
        values[i] = row
    for q in queries:
        if not any(values[i].get(q, 0.0) > 0.0 for i in advs):
            values[advs[int(rng.integers(n_a))]][q] = float(np.round(rng.uniform(0.25, value_hi), 3))
    if kappa == "max":
        kappa = n_s
    elif kappa is None:
        kappa = int(rng.integers(1, n_s + 1))
    return build_scenario(graph, QueryDistribution(p), MatchingPolicy(pi),
                          SlotWeights(weights), ValuationProfile(values), kappa)


def random_bid_profile(rng, scenario, overbid=0.0):
    """Random feasible bid profile; overbid>0 scales some bids past the
    keyword value by up to that factor."""
    from bmlab.market import keyword_value, positive_keywords

    bids = {}
    for i in scenario.advertisers:
        pool = sorted(positive_keywords(scenario, i))
        rng.shuffle(pool)
        chosen = pool[: int(rng.integers(0, min(scenario.kappa, len(pool)) + 1))]
        row = {}
        for s in chosen:
            cap = keyword_value(scenario, i, s)
            b = float(rng.uniform(0.0, cap))
            if overbid and rng.random() < 0.5:
                b = cap * float(rng.uniform(1.0, 1.0 + overbid))
            if b > 0.0:
                row[s] = b
        bids[i] = row
    return bids


def brute_force_optimal_welfare(scenario):
    """Oracle: enumerate every per-query assignment of advertisers to
    slots and take the best."""
    w = scenario.weights.as_tuple()
    advs = scenario.advertisers
    total = 0.0
    for q in scenario.graph.queries:
        best = 0.0
        n_slots = min(len(w), len(advs))
        for perm in itertools.permutations(advs, n_slots):
            got = sum(w[k] * scenario.valuations.value(perm[k], q) for k in range(n_slots))
            best = max(best, got)
        total += scenario.p.mass(q) * best
    return total


def exhaustive_min_cover(keyword_neighbors, query_set):
    """Oracle: smallest keyword subset covering query_set, by exhaustive
    subset enumeration. keyword_neighbors: {keyword: iterable of queries}."""
    queries = frozenset(query_set)
    if not queries:
        return 0
    cands = [s for s, qs in keyword_neighbors.items() if queries & frozenset(qs)]
    for size in range(1, len(cands) + 1):
        for combo in itertools.combinations(cands, size):
            covered = set()
            for s in combo:
                covered |= queries & frozenset(keyword_neighbors[s])
            if covered == queries:
                return size
    return None


def vcg_payment_oracle(values, weights, reserve=0.0):
    """Oracle: per-slot VCG payments by brute-force externality.

    values: participating per-click values (all >= reserve, > 0), any
    order.  The seller's opportunity value for an unsold slot is the
    reserve, modeled by padding the candidate pool with seller clones
    worth `reserve` and maximizing over all slot assignments.
    """
    K = len(weights)

    def best_total(vals):
        candidates = list(vals) + [reserve] * K
        return max(sum(w * c for w, c in zip(weights, perm))
                   for perm in itertools.permutations(candidates, K))

    order = sorted(range(len(values)), key=lambda j: -values[j])
    m = min(K, len(values))
    payments = []
    for pos in range(m):
        i = order[pos]
        without = best_total([values[j] for j in range(len(values)) if j != i])
        others_with = 0.0
        for k in range(K):
            if k == pos:
                continue
            others_with += weights[k] * (values[order[k]] if k < m else reserve)
        payments.append(without - others_with)
    return payments


def joint_best_response_oracle(scenario, bids, advertiser, menus):
    """Oracle: best response by enumerating keyword subsets (<= kappa)
    and full menu products, scored with the integral-form utility.
    menus: {keyword: menu tuple} for the advertiser."""
    from bmlab.mechanisms import pbm_utility

    pool = sorted(menus)
    best, best_row = 0.0, {}
    for size in range(0, min(scenario.kappa, len(pool)) + 1):
        for subset in itertools.combinations(pool, size):
            for combo in itertools.product(*(menus[s] for s in subset)):
                row = {s: b for s, b in zip(subset, combo) if b > 0.0}
                trial = dict(bids)
                trial[advertiser] = row
                u = pbm_utility(scenario, trial, advertiser)
                if u > best + 1e-12:
                    best, best_row = u, row
    return best_row, best


def slow_pure_nash_oracle(scenario, menus_by_adv, epsilon):
    """Oracle: the pure-Nash set by direct definition — enumerate every
    joint profile and test every unilateral deviation with the
    integral-form utility.  menus_by_adv: {advertiser: {keyword: menu}}."""
    from bmlab.mechanisms import pbm_utility

    advs = scenario.advertisers
    rows_by_adv = []
    for i in advs:
        pool = sorted(menus_by_adv[i])
        rows = []
        for combo in itertools.product(*(menus_by_adv[i][s] for s in pool)):
            if sum(b > 0.0 for b in combo) <= scenario.kappa:
                rows.append({s: b for s, b in zip(pool, combo) if b > 0.0})
        rows_by_adv.append(rows)
    out = []
    for joint in itertools.product(*rows_by_adv):
        profile = {i: dict(r) for i, r in zip(advs, joint)}
        ok = True
        for a, i in enumerate(advs):
            cur = pbm_utility(scenario, profile, i)
            for alt in rows_by_adv[a]:
                trial = dict(profile)
                trial[i] = alt
                if pbm_utility(scenario, trial, i) > cur + epsilon:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.append(profile)
    return out


def canonical_profiles(profiles):
    """Hashable canonical form of a list of bid profiles, for set
    comparison across enumeration orders."""
    return {
        tuple(sorted((i, tuple(sorted((s, round(b, 9)) for s, b in row.items())))
                     for i, row in p.items()))
        for p in profiles
    }
