"""Resource server: quote, validation pipeline, idempotency claim, grants.

Checks run in a fixed order: payload verification, freshness, binding,
idempotency claim, facilitator verify, then the execution-policy gate. The
claim store is the single serialization point and is safe under concurrent
callers; everything else is per-request state.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Mapping

from .facilitator import Facilitator
from .messages import (
    Freshness,
    PaymentPayload,
    PaymentRequirements,
    SignatureProvider,
    validate_freshness,
    verify_payload,
)
from .sim import Process, Trace

CACHE_CONTROL_VALUE = "no-store, private"


class Policy(str, enum.Enum):
    OPTIMISTIC = "optimistic"
    CONSERVATIVE = "conservative"
    RESERVE_THEN_SETTLE = "reserve-then-settle"


@dataclass(frozen=True)
class Mitigations:
    m1_resource_binding: bool = False
    m1_facilitator_binding: bool = False
    m3_idempotency: bool = False
    m5_cache_control: bool = False


@dataclass(frozen=True)
class ServerConfig:
    policy: Policy = Policy.OPTIMISTIC
    confirmation_depth: int = 3
    mitigations: Mitigations = Mitigations()
    claim_ttl_ms: int = 300_000
    freshness_window_ms: int = 60_000
    price_table: Mapping[str, PaymentRequirements] = field(default_factory=dict)
    replay_409_as_402: bool = False

    def __post_init__(self) -> None:
        if not self.freshness_window_ms < self.claim_ttl_ms:
            raise ValueError("freshness window must be shorter than the claim TTL")
        if self.confirmation_depth < 0:
            raise ValueError("confirmation depth must be >= 0")


class ClaimStore:
    """Atomic (pay_id, resource_id) -> claim-time map with TTL.

    Among any number of concurrent claims on one key, exactly one succeeds
    within a TTL window; expired entries are treated as absent.
    """

    def __init__(self, ttl_ms: int) -> None:
        if ttl_ms <= 0:
            raise ValueError("ttl must be positive")
        self.ttl_ms = ttl_ms
        self._claims: dict[str, int] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(pay_id: str, resource_id: str) -> str:
        return f"{pay_id}:{resource_id}"

    def claim(self, pay_id: str, resource_id: str, now: int) -> bool:
        key = self.key(pay_id, resource_id)
        with self._lock:
            stored = self._claims.get(key)
            if stored is not None and now < stored + self.ttl_ms:
                return False
            self._claims[key] = now
            return True

    def __len__(self) -> int:
        return len(self._claims)


def claim(store: ClaimStore, pay_id: str, resource_id: str, now: int) -> bool:
    return store.claim(pay_id, resource_id, now)


@dataclass(frozen=True)
class Request:
    path: str
    x_payment: tuple = ()          # header values, last one wins downstream
    headers: Mapping[str, str] = field(default_factory=dict)
    client_id: str = "client"
    method: str = "GET"

    def last_payment(self):
        return self.x_payment[-1] if self.x_payment else None

    def is_paid_attempt(self) -> bool:
        return bool(self.x_payment)


@dataclass
class Response:
    status: int
    headers: dict[str, str]
    body: dict | str | None = None
    reason: str | None = None
    pay_id: str | None = None
    served_from_cache: bool = False


@dataclass(frozen=True)
class ServerHops:
    """R <-> F link latencies; reply_extra_ms carries injected delay."""

    to_facilitator_ms: int = 0
    from_facilitator_ms: int = 0
    reply_extra_ms: int = 0

    def reply_ms(self) -> int:
        return self.from_facilitator_ms + self.reply_extra_ms


class ResourceServer:
    def __init__(self, config: ServerConfig, facilitator: Facilitator,
                 provider: SignatureProvider, trace: Trace,
                 hops: ServerHops = ServerHops()) -> None:
        self.config = config
        self.facilitator = facilitator
        self.provider = provider
        self.trace = trace
        self.hops = hops
        self.claims = ClaimStore(config.claim_ttl_ms)
        self.loop = facilitator.chain.loop

    # -- helpers -----------------------------------------------------------

    def _grant_headers(self) -> dict[str, str]:
        if self.config.mitigations.m5_cache_control:
            return {"Cache-Control": CACHE_CONTROL_VALUE}
        return {}

    def _reject(self, status: int, reason: str, pr: PaymentRequirements | None,
                pay_id: str | None, path: str) -> Response:
        edge_status = status
        if status == 409 and self.config.replay_409_as_402:
            edge_status = 402
        self.trace.emit(self.loop.now, "server", "reject", status=status,
                        edge_status=edge_status, reason=reason,
                        resource_id=path, pay_id=pay_id)
        body = pr.to_json() if pr is not None else None
        return Response(edge_status, {}, body, reason, pay_id)

    def _grant(self, pp: PaymentPayload, path: str, tx_hash: str | None,
               final_at: int | None) -> Response:
        now = self.loop.now
        self.trace.emit(now, "server", "grant", pay_id=pp.pay_id_hex(),
                        resource_id=path, grant_time=now,
                        policy=self.config.policy.value,
                        tx_hash=tx_hash, final_at=final_at)
        return Response(200, self._grant_headers(),
                        {"resource": path, "content": f"paid:{path}"},
                        pay_id=pp.pay_id_hex())

    # -- the pipeline ------------------------------------------------------

    def handle_request(self, req: Request) -> Process:
        """Generator process resolving to the terminal Response."""
        now = self.loop.now
        self.trace.emit(now, "server", "request", resource_id=req.path,
                        client_id=req.client_id, paid=req.is_paid_attempt())
        pr = self.config.price_table.get(req.path)
        if pr is None:
            return self._reject(404, "UnknownResource", None, None, req.path)

        raw = req.last_payment()
        if raw is None:
            self.trace.emit(now, "server", "quote_402", resource_id=req.path,
                            amount=pr.amount)
            return Response(402, {}, pr.to_json(), "PaymentRequired")
        if not isinstance(raw, PaymentPayload):
            return self._reject(402, "Malformed", pr, None, req.path)
        pp: PaymentPayload = raw
        pay_id = pp.pay_id_hex()

        result = verify_payload(pp, self.provider)
        if not result.ok:
            return self._reject(402, result.reason or "BadSignature", pr, pay_id, req.path)

        fresh = validate_freshness(pp, now, self.config.freshness_window_ms)
        if fresh is not Freshness.OK:
            return self._reject(402, fresh.value, pr, pay_id, req.path)

        m = self.config.mitigations
        if m.m1_resource_binding and pp.resource_id != req.path:
            return self._reject(402, "ResourceMismatch", pr, pay_id, req.path)
        if m.m1_facilitator_binding and pp.facilitator != self.facilitator.addr:
            return self._reject(402, "FacilitatorMismatch", pr, pay_id, req.path)

        if m.m3_idempotency:
            if self.claims.claim(pay_id, req.path, now):
                self.trace.emit(now, "server", "claim_ok", pay_id=pay_id,
                                resource_id=req.path)
            else:
                self.trace.emit(now, "server", "claim_reject", pay_id=pay_id,
                                resource_id=req.path)
                return self._reject(409, "Replay", pr, pay_id, req.path)

        yield self.hops.to_facilitator_ms + self.facilitator.config.verify_latency_ms
        verdict = self.facilitator.verify(pp, pr)
        yield self.hops.reply_ms()
        if not verdict.is_valid:
            return self._reject(402, verdict.reason or "Invalid", pr, pay_id, req.path)

        if self.config.policy is Policy.OPTIMISTIC:
            response = self._grant(pp, req.path, None, None)
            # Settlement continues after the grant; outcome never gates it.
            self.loop.after(self.hops.to_facilitator_ms,
                            lambda: self.facilitator.settle(pp, pr))
            return response

        yield self.hops.to_facilitator_ms
        handle = self.facilitator.settle(pp, pr)

        if self.config.policy is Policy.CONSERVATIVE:
            report = yield handle.outcome
            yield self.hops.reply_ms()
            if not report.ok:
                return self._reject(402, f"SettlementFailed:{report.error}", pr,
                                    pay_id, req.path)
            return self._grant(pp, req.path, report.tx_hash, report.reported_final_at)

        # Reserve-then-settle: grant on the reserve ack (first inclusion);
        # final settlement keeps running asynchronously.
        reserved = yield handle.reserved
        yield self.hops.reply_ms()
        if not reserved:
            report = handle.outcome.value if handle.outcome.resolved else None
            error = report.error if report is not None else "ReserveFailed"
            return self._reject(402, f"SettlementFailed:{error}", pr, pay_id, req.path)
        return self._grant(pp, req.path, handle.tx_hash, None)
