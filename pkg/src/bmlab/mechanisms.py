"""Auction engines and their exact functionals.

Two broad-match mechanisms share the per-keyword GSP core:

* the probabilistic mechanism samples one keyword per query from the
  matching policy and runs GSP among that keyword's bidders;
* the standard baseline pools every matched keyword per query,
  transforming each advertiser's bid to their maximum over matched
  keywords.

Expected welfare, utility, and revenue are evaluated as exact finite
sums over (query, keyword, slot); a seeded round simulator provides the
Monte-Carlo counterpart.  A per-keyword VCG variant with reserves
supplies the revenue benchmark.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

from .errors import ValidationError
from .market import Scenario, keyword_mass, keyword_value

_NO_RESERVE: Mapping[str, float] = {}


def validate_bid_profile(scenario: Scenario, bids: Mapping[str, Mapping[str, float]]):
    """A bid profile is a sparse per-advertiser map keyword -> bid.

    Nonnegative bids on known keywords, at most kappa keywords with a
    strictly positive bid per advertiser.
    """
    known_kw = set(scenario.graph.keywords)
    for adv, row in bids.items():
        if adv not in scenario.advertisers:
            raise ValidationError(f"bid profile names unknown advertiser {adv!r}")
        positive = 0
        for s, b in row.items():
            if s not in known_kw:
                raise ValidationError(
                    f"advertiser {adv!r} bids on unknown keyword {s!r}")
            b = float(b)
            if not (math.isfinite(b) and b >= 0.0):
                raise ValidationError(
                    f"bid of {adv!r} on {s!r} must be finite and >= 0, got {b}")
            if b > 0.0:
                positive += 1
        if positive > scenario.kappa:
            raise ValidationError(
                f"advertiser {adv!r} has {positive} positive bids; budget is "
                f"kappa = {scenario.kappa}")
    return bids


def load_bid_profile(source, scenario: Scenario):
    """Read a bid profile from a JSON file path or file object."""
    if hasattr(source, "read"):
        raw = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            raw = fh.read()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed bid profile JSON: {exc}") from exc
    if not isinstance(obj, dict) or not all(isinstance(r, dict) for r in obj.values()):
        raise ValidationError("bid profile must be a JSON object of objects")
    bids = {adv: {s: float(b) for s, b in row.items()} for adv, row in obj.items()}
    return validate_bid_profile(scenario, bids)


@dataclass(frozen=True)
class KeywordRanking:
    """GSP outcome on one keyword: advertisers by descending bid with
    per-position prices.  Positions are 0-indexed; prices beyond the
    ranked list are zero."""

    keyword: str | None
    ranked: tuple          # advertiser ids, descending bid
    bids: tuple            # bid of each ranked advertiser
    prices: tuple          # per-click price at each position

    def position(self, advertiser):
        """0-indexed slot of the advertiser, or None when unranked."""
        try:
            return self.ranked.index(advertiser)
        except ValueError:
            return None

    def price(self, k):
        return self.prices[k] if 0 <= k < len(self.prices) else 0.0


def gsp_rank(bids: Mapping[str, float], weights, reserve=0.0, keyword=None,
             tie="lex", rng=None) -> KeywordRanking:
    """Rank one keyword's bids by GSP with an optional reserve.

    Advertisers with a zero bid or a bid below the reserve do not
    participate.  Price at position k is max{reserve, next bid down},
    which never exceeds the bid at k.  Ties break toward the
    lexicographically smaller advertiser id, or uniformly at random
    with tie="random" and an explicit rng.
    """
    if reserve < 0.0:
        raise ValidationError(f"reserve must be >= 0, got {reserve}")
    entrants = [(adv, float(b)) for adv, b in bids.items()
                if b > 0.0 and b >= reserve]
    if tie == "lex":
        entrants.sort(key=lambda ab: (-ab[1], ab[0]))
    elif tie == "random":
        if rng is None:
            raise ValidationError("tie='random' needs an rng")
        shaken = [(adv, b, rng.random()) for adv, b in entrants]
        shaken.sort(key=lambda abu: (-abu[1], abu[2]))
        entrants = [(adv, b) for adv, b, _ in shaken]
    else:
        raise ValidationError(f"unknown tie rule {tie!r}")
    ranked = tuple(adv for adv, _ in entrants)
    bvals = tuple(b for _, b in entrants)
    prices = tuple(max(reserve, bvals[k + 1]) if k + 1 < len(bvals) else reserve
                   for k in range(len(bvals)))
    return KeywordRanking(keyword=keyword, ranked=ranked, bids=bvals, prices=prices)


def _keyword_bids(bids, s):
    """Column of the sparse profile: advertiser -> bid on keyword s."""
    return {adv: row[s] for adv, row in bids.items() if row.get(s, 0.0) > 0.0}


@dataclass(frozen=True)
class AuctionOutcome:
    """One realized round: the sampled keyword's ranking applied to the
    arriving query.  Assignments are (slot, advertiser, price, click
    weight) with 1-based slots; welfare and revenue decompose as sums
    over those rows."""

    query: str
    sampled_keyword: str
    ranking: KeywordRanking
    assignments: tuple
    welfare: float
    revenue: float


def _outcome(scenario, query, keyword, ranking) -> AuctionOutcome:
    w = scenario.weights
    rows = []
    welfare = 0.0
    revenue = 0.0
    for k, adv in enumerate(ranking.ranked):
        wk = w.weight(k)
        if wk <= 0.0:
            break
        rows.append((k + 1, adv, ranking.prices[k], wk))
        welfare += wk * scenario.valuations.value(adv, query)
        revenue += wk * ranking.prices[k]
    return AuctionOutcome(query=query, sampled_keyword=keyword, ranking=ranking,
                          assignments=tuple(rows), welfare=welfare, revenue=revenue)


def pbm_run_round(scenario: Scenario, bids, query, rng, reserves=_NO_RESERVE,
                  tie="lex") -> AuctionOutcome:
    """One probabilistic-match round for an arriving query: sample a
    keyword from the matching policy, then GSP among its bidders."""
    keywords = scenario.pi.support(query)
    if len(keywords) > 1:
        masses = [scenario.pi.mass(query, s) for s in keywords]
        keyword = keywords[rng.choice(len(keywords), p=masses)]
    else:
        keyword = keywords[0]
    ranking = gsp_rank(_keyword_bids(bids, keyword), scenario.weights,
                       reserve=reserves.get(keyword, 0.0), keyword=keyword,
                       tie=tie, rng=rng)
    return _outcome(scenario, query, keyword, ranking)


def _rankings_by_keyword(scenario, bids, reserves):
    return {s: gsp_rank(_keyword_bids(bids, s), scenario.weights,
                        reserve=reserves.get(s, 0.0), keyword=s)
            for s in scenario.graph.keywords}


def pbm_expected_welfare(scenario: Scenario, bids, reserves=_NO_RESERVE) -> float:
    """Exact expected welfare: sum over queries, matched keywords, and
    slots of P(q) * pi_q(s) * w_k * (query value of the ranked
    advertiser)."""
    rankings = _rankings_by_keyword(scenario, bids, reserves)
    w = scenario.weights
    total = 0.0
    for q in scenario.graph.queries:
        pq = scenario.p.mass(q)
        for s in scenario.graph.query_neighbors(q):
            mqs = scenario.pi.mass(q, s)
            if mqs <= 0.0:
                continue
            ranking = rankings[s]
            contrib = sum(w.weight(k) * scenario.valuations.value(adv, q)
                          for k, adv in enumerate(ranking.ranked)
                          if w.weight(k) > 0.0)
            total += pq * mqs * contrib
    return total


def pbm_expected_revenue(scenario: Scenario, bids, reserves=_NO_RESERVE) -> float:
    """Exact expected revenue under per-keyword reserves: traffic-mass
    weighted sum of w_k * price_k over keyword rankings."""
    total = 0.0
    w = scenario.weights
    for s in scenario.graph.keywords:
        ranking = gsp_rank(_keyword_bids(bids, s), scenario.weights,
                           reserve=reserves.get(s, 0.0), keyword=s)
        per_click = sum(w.weight(k) * ranking.prices[k]
                        for k in range(len(ranking.ranked)) if w.weight(k) > 0.0)
        if per_click > 0.0:
            total += keyword_mass(scenario, s) * per_click
    return total


def pbm_utility(scenario: Scenario, bids, advertiser, reserves=_NO_RESERVE) -> float:
    """Exact expected utility of one advertiser: value minus price at
    the won position, integrated over queries and matched keywords."""
    rankings = _rankings_by_keyword(scenario, bids, reserves)
    positions = {s: r.position(advertiser) for s, r in rankings.items()}
    w = scenario.weights
    total = 0.0
    for q in scenario.graph.queries:
        pq = scenario.p.mass(q)
        vq = scenario.valuations.value(advertiser, q)
        for s in scenario.graph.query_neighbors(q):
            k = positions[s]
            if k is None:
                continue
            wk = w.weight(k)
            if wk <= 0.0:
                continue
            mqs = scenario.pi.mass(q, s)
            total += pq * mqs * wk * (vq - rankings[s].prices[k])
    return total


def pbm_keyword_utility(scenario: Scenario, bids, advertiser, keyword,
                        reserves=_NO_RESERVE) -> float:
    """The advertiser's utility from one keyword's auction: traffic
    mass times w_k * (keyword value - price).  Summing over keywords
    recovers pbm_utility exactly."""
    ranking = gsp_rank(_keyword_bids(bids, keyword), scenario.weights,
                       reserve=reserves.get(keyword, 0.0), keyword=keyword)
    k = ranking.position(advertiser)
    if k is None:
        return 0.0
    wk = scenario.weights.weight(k)
    if wk <= 0.0:
        return 0.0
    mass = keyword_mass(scenario, keyword)
    return mass * wk * (keyword_value(scenario, advertiser, keyword)
                        - ranking.prices[k])


def sbm_query_bid(bids, advertiser, query, graph) -> float:
    """Transformed bid of an advertiser on a query: the maximum of
    their bids over the query's matched keywords, zero when none."""
    row = bids.get(advertiser, {})
    return max((row.get(s, 0.0) for s in graph.query_neighbors(query)),
               default=0.0)


def sbm_rank_query(scenario: Scenario, bids, query, tie="lex",
                   rng=None) -> KeywordRanking:
    """Per-query GSP of the standard baseline: every advertiser enters
    with their max-transformed bid; price is the next transformed bid."""
    transformed = {adv: sbm_query_bid(bids, adv, query, scenario.graph)
                   for adv in bids}
    return gsp_rank(transformed, scenario.weights, keyword=None, tie=tie, rng=rng)


def sbm_expected_welfare(scenario: Scenario, bids) -> float:
    """Expected welfare of the max-transform baseline: per-query GSP on
    transformed bids, crediting query values."""
    w = scenario.weights
    total = 0.0
    for q in scenario.graph.queries:
        ranking = sbm_rank_query(scenario, bids, q)
        contrib = sum(w.weight(k) * scenario.valuations.value(adv, q)
                      for k, adv in enumerate(ranking.ranked)
                      if w.weight(k) > 0.0)
        total += scenario.p.mass(q) * contrib
    return total


def revenue_with_reserve(scenario: Scenario, bids, reserves=_NO_RESERVE) -> float:
    """Alias for the exact expected-revenue functional (kept for the
    reserve-study call sites)."""
    return pbm_expected_revenue(scenario, bids, reserves)


def vcg_slot_payments(values, weights, reserve=0.0):
    """Position-auction VCG payments with a reserve.

    values: participating per-click values sorted descending (all at or
    above the reserve).  Payment of the slot-k winner, already click-
    weighted, charges the externality on lower bidders and on the
    seller's opportunity value (the reserve) for freed slots:

        p_k = sum_{j >= k} (w_j - w_{j+1}) * max{r, value at j+1}

    with weight/value 0 beyond their lists; the tail telescopes to
    w_m * r at the last filled slot m.
    """
    w = tuple(weights)
    m = min(len(w), len(values))
    payments = []
    for k in range(m):
        pay = 0.0
        for j in range(k, len(w)):
            w_next = w[j + 1] if j + 1 < len(w) else 0.0
            v_next = values[j + 1] if j + 1 < len(values) else 0.0
            pay += (w[j] - w_next) * max(reserve, v_next)
        payments.append(pay)
    return tuple(payments)


def vcg_with_reserve(scenario: Scenario, kw_values, reserves=_NO_RESERVE):
    """Per-keyword VCG with reserves on truthful keyword values.

    kw_values: {advertiser: {keyword: value}} as produced by
    market.keyword_values.  Participants on a keyword are advertisers
    whose value is positive and at or above the reserve.  Returns
    (allocation, revenue): allocation maps keyword -> ranked winner
    tuple; revenue is traffic-mass weighted.
    """
    w = scenario.weights.as_tuple()
    allocation = {}
    revenue = 0.0
    for s in scenario.graph.keywords:
        r = reserves.get(s, 0.0)
        vals = sorted(((kw_values[adv].get(s, 0.0), adv) for adv in kw_values
                       if kw_values[adv].get(s, 0.0) > 0.0
                       and kw_values[adv].get(s, 0.0) >= r),
                      key=lambda va: (-va[0], va[1]))
        m = min(len(w), len(vals))
        winners = tuple(adv for _, adv in vals[:m])
        allocation[s] = winners
        if not winners:
            continue
        payments = vcg_slot_payments([v for v, _ in vals], w, r)
        revenue += keyword_mass(scenario, s) * sum(payments)
    return allocation, revenue
