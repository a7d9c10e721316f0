"""Network layer between client and server: delay, MITM header duplication,
and a shared cache keyed on method+path.

The cache never stores a ``no-store`` response, never serves a ``private``
response to a different requester identity, and freely stores and serves
responses that carry no cache directive at all (the permissive proxy case).
A cache hit is served without contacting the origin; a hit handed to an
unpaid requester is the leakage event the attack-3 metrics count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .server import Request, ResourceServer, Response
from .sim import EventLoop, Future, Trace

INJECTED_HEADER_GARBAGE = b"attacker-injected-duplicate"


@dataclass
class CacheEntry:
    response: Response
    stored_at: int
    private_for: str | None


class SharedCache:
    def __init__(self) -> None:
        self.entries: dict[str, CacheEntry] = {}

    @staticmethod
    def key(req: Request) -> str:
        return f"{req.method} {req.path}"

    def lookup(self, req: Request) -> Response | None:
        entry = self.entries.get(self.key(req))
        if entry is None:
            return None
        if entry.private_for is not None and entry.private_for != req.client_id:
            return None
        return entry.response

    def store(self, req: Request, response: Response, now: int) -> bool:
        directives = [d.strip() for d in
                      response.headers.get("Cache-Control", "").split(",") if d.strip()]
        if "no-store" in directives:
            return False
        private_for = req.client_id if "private" in directives else None
        self.entries[self.key(req)] = CacheEntry(response, now, private_for)
        return True

    def clear(self) -> None:
        self.entries.clear()


def cache_lookup(cache: SharedCache, req: Request) -> Response | None:
    return cache.lookup(req)


def cache_store(cache: SharedCache, req: Request, response: Response, now: int) -> bool:
    return cache.store(req, response, now)


@dataclass(frozen=True)
class Intermediary:
    kind: str                      # "mitm-duplicate-header" | "shared-cache"
    cache_policy: str = "caching"  # "caching" | "pass-through"
    cache: SharedCache | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mitm-duplicate-header", "shared-cache"):
            raise ValueError(f"unknown intermediary: {self.kind}")
        if self.cache_policy not in ("caching", "pass-through"):
            raise ValueError(f"unknown cache policy: {self.cache_policy}")
        if self.kind == "shared-cache" and self.cache is None:
            object.__setattr__(self, "cache", SharedCache())


@dataclass(frozen=True)
class PathConfig:
    client_to_server_ms: int = 0
    intermediaries: tuple[Intermediary, ...] = ()

    def __post_init__(self) -> None:
        if self.client_to_server_ms < 0:
            raise ValueError("delays must be non-negative")


def forward(req: Request, path: PathConfig, trace: Trace, now: int) -> Request:
    """Apply header-mutating intermediaries; mutations are trace-recorded."""
    out = req
    for hop in path.intermediaries:
        if hop.kind == "mitm-duplicate-header" and out.is_paid_attempt():
            out = replace(out, x_payment=out.x_payment + (INJECTED_HEADER_GARBAGE,))
            trace.emit(now, "path", "header_mutated", resource_id=out.path,
                       values=len(out.x_payment))
    return out


def run_request(loop: EventLoop, trace: Trace, server: ResourceServer,
                path: PathConfig, req: Request):
    """Drive one request over the path; resolves to the terminal Response.

    Emits one ``request_complete`` event with the per-request fields
    {mutated, served_from_cache, paid, status}.
    """

    def process():
        sent_at = loop.now
        paid = req.is_paid_attempt()
        if paid:
            trace.emit(sent_at, "client", "payment_presented",
                       resource_id=req.path, client_id=req.client_id)
        forwarded = forward(req, path, trace, sent_at)
        mutated = forwarded.x_payment != req.x_payment

        caches = [hop.cache for hop in path.intermediaries
                  if hop.kind == "shared-cache" and hop.cache_policy == "caching"]
        for cache in caches:
            hit = cache.lookup(forwarded)
            if hit is not None:
                trace.emit(loop.now, "cache", "cache_hit", resource_id=req.path,
                           client_id=req.client_id, paid=paid)
                trace.emit(loop.now, "path", "request_complete", status=hit.status,
                           mutated=mutated, served_from_cache=True, paid=paid,
                           resource_id=req.path, client_id=req.client_id)
                return replace(hit, served_from_cache=True)

        yield path.client_to_server_ms
        response = yield loop.spawn(server.handle_request(forwarded))

        for cache in caches:
            stored = cache.store(forwarded, response, loop.now)
            trace.emit(loop.now, "cache", "cache_store", resource_id=req.path,
                       stored=stored, status=response.status)
        trace.emit(loop.now, "path", "request_complete", status=response.status,
                   mutated=mutated, served_from_cache=False, paid=paid,
                   resource_id=req.path, client_id=req.client_id)
        return response

    return loop.spawn(process())
