"""Bazaar-style discovery: catalog, lexical retrieval, attacker registration,
selection policies, and discovery-side defenses.

Retrieval scores entries by distinct-token overlap between the query and the
entry's name+description+tags, breaking ties by trust score then server_id,
and returns a top-k shortlist. Everything is a pure function over immutable
catalogs, so experiments parallelize trivially across queries.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .stats import RateEstimate

_WORD = re.compile(r"[a-z0-9]+")
STOPWORDS = frozenset(
    "a an the for of to in with and or get via per my our".split()
)


class EmptyCatalog(ValueError):
    pass


def tokenize(text: str) -> frozenset[str]:
    return frozenset(t for t in _WORD.findall(text.lower()) if t not in STOPWORDS)


@dataclass(frozen=True)
class CatalogEntry:
    server_id: str
    domain: str
    name: str
    description: str
    tags: tuple[str, ...]
    trust_score: float
    price: int
    latency_hint_ms: int
    category: str
    adversarial: bool = False  # ground truth for scoring; policies never read it

    def tokens(self) -> frozenset[str]:
        return tokenize(f"{self.name} {self.description} {' '.join(self.tags)}")

    def to_json(self) -> dict:
        return {
            "server_id": self.server_id,
            "domain": self.domain,
            "name": self.name,
            "description": self.description,
            "tags": list(self.tags),
            "trust_score": self.trust_score,
            "price": self.price,
            "latency_hint_ms": self.latency_hint_ms,
            "category": self.category,
            "adversarial": self.adversarial,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CatalogEntry":
        return cls(
            server_id=obj["server_id"],
            domain=obj["domain"],
            name=obj["name"],
            description=obj["description"],
            tags=tuple(obj.get("tags", ())),
            trust_score=float(obj["trust_score"]),
            price=int(obj["price"]),
            latency_hint_ms=int(obj.get("latency_hint_ms", 100)),
            category=obj["category"],
            adversarial=bool(obj.get("adversarial", False)),
        )


Catalog = tuple[CatalogEntry, ...]


def load_catalog(path: str | None = None) -> Catalog:
    """Load a catalog fixture; the bundled one when no path is given."""
    if path is None:
        text = resources.files("x402sim.fixtures").joinpath("catalog.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    obj = json.loads(text)
    entries = tuple(CatalogEntry.from_json(e) for e in obj["entries"])
    domains = [e.domain for e in entries]
    if len(set(domains)) != len(domains):
        raise ValueError("catalog domains must be unique")
    return entries


def load_queries(path: str | None = None) -> dict[str, list[str]]:
    if path is None:
        text = resources.files("x402sim.fixtures").joinpath("queries.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)["queries"]


# -- retrieval ---------------------------------------------------------------


@dataclass(frozen=True)
class ScoredEntry:
    entry: CatalogEntry
    score: int


def retrieve(catalog: Catalog, query: str, k: int = 10,
             diversify_per_domain: int | None = None) -> list[ScoredEntry]:
    """Top-k shortlist by token overlap, trust tiebreak, id tiebreak.

    With ranking diversification, at most ``diversify_per_domain`` entries
    per domain occupy shortlist slots; later ranks fill the freed slots.
    """
    if not catalog:
        raise EmptyCatalog("catalog has no entries")
    if k < 1:
        raise ValueError("k must be >= 1")
    query_tokens = tokenize(query)
    scored = [ScoredEntry(e, len(query_tokens & e.tokens())) for e in catalog]
    scored.sort(key=lambda s: (-s.score, -s.entry.trust_score, s.entry.server_id))
    if diversify_per_domain is None:
        return scored[:k]
    out: list[ScoredEntry] = []
    per_domain: dict[str, int] = {}
    for s in scored:
        used = per_domain.get(s.entry.domain, 0)
        if used >= diversify_per_domain:
            continue
        per_domain[s.entry.domain] = used + 1
        out.append(s)
        if len(out) == k:
            break
    return out


# -- attacker registration and defenses ---------------------------------------


@dataclass(frozen=True)
class DiscoveryDefenses:
    """Discovery-side hardening knobs (all off by default).

    Metadata validation rejects keyword stuffing: listings whose word stream
    is almost entirely category query vocabulary (template concatenation)
    fail, while prose listings that merely use the vocabulary pass.
    """

    metadata_validation: bool = False
    stuffing_density: float = 0.85    # max fraction of listing words that are query vocab
    sybil_cap: int | None = None      # max near-duplicate listings admitted
    duplicate_jaccard: float = 0.9
    diversify_per_domain: int | None = None


@dataclass(frozen=True)
class RegistrationResult:
    catalog: Catalog
    admitted: tuple[CatalogEntry, ...]
    rejected: tuple[tuple[str, str], ...]  # (server_id, reason)


def category_vocabulary(queries: Sequence[str]) -> tuple[str, ...]:
    vocab: set[str] = set()
    for q in queries:
        vocab |= tokenize(q)
    return tuple(sorted(vocab))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def crafted_entry(category: str, queries: Sequence[str], ordinal: int,
                  domain: str | None = None) -> CatalogEntry:
    """Template-concatenated listing aligned to the category's query set."""
    vocab = category_vocabulary(queries)
    name = f"{category.replace('_', ' ')} {' '.join(vocab[:3])} pro service"
    description = " ".join(vocab)
    return CatalogEntry(
        server_id=f"adv-{category}-{ordinal:02d}",
        domain=domain or f"{category.replace('_', '-')}-svc-{ordinal:02d}.example",
        name=name,
        description=description,
        tags=vocab[:5],
        trust_score=0.62,
        price=900,
        latency_hint_ms=80,
        category=category,
        adversarial=True,
    )


def register_entries(catalog: Catalog, entries: Iterable[CatalogEntry],
                     defenses: DiscoveryDefenses = DiscoveryDefenses(),
                     category_queries: Sequence[str] = ()) -> RegistrationResult:
    """Admit listings subject to the active discovery defenses."""
    admitted: list[CatalogEntry] = []
    rejected: list[tuple[str, str]] = []
    current = list(catalog)
    vocab = frozenset(category_vocabulary(category_queries)) if category_queries else frozenset()
    for entry in entries:
        if defenses.metadata_validation and vocab:
            words = [w for w in _WORD.findall(f"{entry.name} {entry.description}".lower())
                     if w not in STOPWORDS]
            density = sum(1 for w in words if w in vocab) / max(1, len(words))
            if density > defenses.stuffing_density:
                rejected.append((entry.server_id, "MetadataStuffing"))
                continue
        if defenses.sybil_cap is not None:
            dupes = sum(1 for other in current
                        if _jaccard(entry.tokens(), other.tokens()) >= defenses.duplicate_jaccard)
            if dupes >= defenses.sybil_cap:
                rejected.append((entry.server_id, "SybilCap"))
                continue
        current.append(entry)
        admitted.append(entry)
    return RegistrationResult(tuple(current), tuple(admitted), tuple(rejected))


def register_attacker(catalog: Catalog, category: str, mode: str,
                      queries: Sequence[str], sybil_count: int = 1,
                      shared_domain: bool = False,
                      defenses: DiscoveryDefenses = DiscoveryDefenses()) -> RegistrationResult:
    """Add crafted metadata (one listing) or a Sybil flood of them."""
    if mode == "metadata-crafted":
        entries = [crafted_entry(category, queries, 0)]
    elif mode == "sybil":
        if sybil_count < 1:
            raise ValueError("sybil count must be >= 1")
        # Distinct domains by default; a shared domain is the variant the
        # per-domain diversification defense is exercised against.
        domain = f"{category.replace('_', '-')}-hub.example" if shared_domain else None
        entries = [crafted_entry(category, queries, i, domain=domain)
                   for i in range(sybil_count)]
    else:
        raise ValueError(f"unknown attack mode: {mode}")
    return register_entries(catalog, entries, defenses, queries)


# -- selection policies --------------------------------------------------------


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str = "softmax-lexical"  # lexical-greedy | trust-weighted | price-min | softmax-lexical
    temperature: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("lexical-greedy", "trust-weighted", "price-min",
                             "softmax-lexical"):
            raise ValueError(f"unknown policy: {self.kind}")
        if self.kind == "softmax-lexical" and self.temperature <= 0:
            raise ValueError("temperature must be positive")


def select(shortlist: Sequence[ScoredEntry], policy: SelectionPolicy,
           rng: np.random.Generator) -> str:
    """Pick one server_id from the shortlist; deterministic given the rng state."""
    if not shortlist:
        raise ValueError("shortlist must be non-empty")
    if policy.kind == "lexical-greedy":
        return shortlist[0].entry.server_id
    if policy.kind == "price-min":
        best = min(shortlist, key=lambda s: (s.entry.price, s.entry.server_id))
        return best.entry.server_id
    if policy.kind == "trust-weighted":
        weights = np.array([s.entry.trust_score for s in shortlist], dtype=float)
    else:
        scores = np.array([s.score for s in shortlist], dtype=float)
        weights = np.exp((scores - scores.max()) / policy.temperature)
    total = weights.sum()
    if total <= 0:
        return shortlist[0].entry.server_id
    idx = int(rng.choice(len(shortlist), p=weights / total))
    return shortlist[idx].entry.server_id


# -- experiment -----------------------------------------------------------------


@dataclass(frozen=True)
class CategoryResult:
    category: str
    honest_servers: int
    rate: RateEstimate
    applicability: RateEstimate | None
    baseline_rate: RateEstimate
    selection_bias: bool  # manipulated rate strictly above paired baseline

    def to_json(self) -> dict:
        return {
            "category": self.category,
            "honest_servers": self.honest_servers,
            "selection_rate": self.rate.to_json(),
            "applicability": None if self.applicability is None else self.applicability.to_json(),
            "baseline_selection_rate": self.baseline_rate.to_json(),
            "selection_bias": self.selection_bias,
        }


@dataclass(frozen=True)
class SelectionReport:
    mode: str
    sybil_count: int
    per_category: tuple[CategoryResult, ...]
    aggregate: RateEstimate
    decisions: int

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "sybil_count": self.sybil_count,
            "aggregate_selection_rate": self.aggregate.to_json(),
            "decisions": self.decisions,
            "per_category": [c.to_json() for c in self.per_category],
        }


def _decision_rng(base_seed: int, category: str, query_idx: int, rep: int) -> np.random.Generator:
    # zlib.crc32 keeps the stream stable across processes (str.hash is not).
    seq = np.random.SeedSequence([base_seed & 0xFFFFFFFF, zlib.crc32(category.encode()),
                                  query_idx, rep])
    return np.random.default_rng(seq)


def run_selection_experiment(catalog: Catalog, queries: dict[str, list[str]],
                             policy: SelectionPolicy, attack_mode: str | None,
                             sybil_count: int = 1, repetitions: int = 1,
                             defenses: DiscoveryDefenses = DiscoveryDefenses(),
                             shortlist_k: int = 10,
                             shared_domain: bool = False) -> SelectionReport:
    """Per-category and aggregate adversarial selection rates with paired
    clean-catalog baselines (identical per-decision rng streams)."""
    if not queries or any(not qs for qs in queries.values()):
        raise ValueError("at least one query per category is required")
    per_category: list[CategoryResult] = []
    total_adv = 0
    total_decisions = 0
    for category in sorted(queries):
        qs = queries[category]
        if attack_mode is None:
            attacked = catalog
            adversaries: set[str] = set()
        else:
            registration = register_attacker(catalog, category, attack_mode, qs,
                                             sybil_count=sybil_count,
                                             shared_domain=shared_domain,
                                             defenses=defenses)
            attacked = registration.catalog
            adversaries = {e.server_id for e in registration.admitted}
        adv_hits = 0
        base_hits = 0
        applicable = 0
        decisions = 0
        for query_idx, query in enumerate(qs):
            short_attacked = retrieve(attacked, query, shortlist_k,
                                      defenses.diversify_per_domain)
            short_base = retrieve(catalog, query, shortlist_k,
                                  defenses.diversify_per_domain)
            in_shortlist = any(s.entry.server_id in adversaries for s in short_attacked)
            for rep in range(repetitions):
                rng = _decision_rng(policy.seed, category, query_idx, rep)
                rng_base = _decision_rng(policy.seed, category, query_idx, rep)
                chosen = select(short_attacked, policy, rng)
                chosen_base = select(short_base, policy, rng_base)
                decisions += 1
                applicable += int(in_shortlist)
                adv_hits += int(chosen in adversaries)
                base_hits += int(chosen_base in adversaries)  # always 0: R* unlisted
        honest = sum(1 for e in catalog if e.category == category and not e.adversarial)
        rate = RateEstimate.from_counts(adv_hits, decisions)
        base_rate = RateEstimate.from_counts(base_hits, decisions)
        per_category.append(CategoryResult(
            category, honest, rate,
            None if attack_mode is None else RateEstimate.from_counts(applicable, decisions),
            base_rate, rate.point > base_rate.point,
        ))
        total_adv += adv_hits
        total_decisions += decisions
    aggregate = RateEstimate.from_counts(total_adv, total_decisions)
    return SelectionReport(attack_mode or "baseline", sybil_count,
                           tuple(per_category), aggregate, total_decisions)
