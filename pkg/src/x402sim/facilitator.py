"""The verify/settle party, with honest, optimistic-bug, and byzantine modes.

Honest behavior reports a settlement only once the transaction holds
``report_depth`` confirmations and is a deterministic function of the chain
view. The optimistic-bug mode replies as soon as the transaction is merely
visible (mempool or first confirmation, per ``bug_signal``). The byzantine
mode lies: with probability ``premature_report_prob`` it reports success
without submitting anything at all, and otherwise degrades to the
optimistic-bug behavior.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .chain import Chain
from .messages import (
    Freshness,
    PaymentPayload,
    PaymentRequirements,
    SignatureProvider,
    validate_freshness,
    verify_payload,
)
from .settlement import Authorization, Permit2Config, SettlementContracts, SettlementError
from .sim import Future


class FacilitatorMode(str, enum.Enum):
    HONEST = "honest"
    OPTIMISTIC_BUG = "optimistic-bug"
    BYZANTINE = "byzantine"


class SettlementPath(str, enum.Enum):
    EIP3009 = "eip3009"
    PERMIT2 = "permit2"


@dataclass(frozen=True)
class FacilitatorConfig:
    mode: FacilitatorMode = FacilitatorMode.HONEST
    report_depth: int = 3
    premature_report_prob: float = 0.0
    verify_latency_ms: int = 50
    freshness_window_ms: int = 60_000
    bug_signal: str = "first-confirmation"  # or "mempool"
    settlement_path: SettlementPath = SettlementPath.EIP3009
    permit2: Permit2Config = Permit2Config()

    def __post_init__(self) -> None:
        if self.mode is not FacilitatorMode.BYZANTINE and self.premature_report_prob:
            raise ValueError("premature reports are a byzantine-only behavior")
        if not 0.0 <= self.premature_report_prob <= 1.0:
            raise ValueError("premature report probability must lie in [0, 1]")
        if self.bug_signal not in ("mempool", "first-confirmation"):
            raise ValueError(f"unknown bug signal: {self.bug_signal}")
        if self.report_depth < 0:
            raise ValueError("report depth must be >= 0")


@dataclass(frozen=True)
class Verdict:
    is_valid: bool
    reason: str | None = None


@dataclass
class SettleReport:
    ok: bool
    tx_hash: str | None
    reported_final_at: int | None
    error: str | None = None


@dataclass
class SettleHandle:
    """Futures a server can gate on: reserve ack and the terminal report."""

    tx_hash: str | None
    reserved: Future
    outcome: Future


class Facilitator:
    def __init__(self, addr: str, config: FacilitatorConfig, chain: Chain,
                 contracts: SettlementContracts, provider: SignatureProvider,
                 rng: np.random.Generator) -> None:
        self.addr = addr
        self.config = config
        self.chain = chain
        self.contracts = contracts
        self.provider = provider
        self.rng = rng
        self.settle_attempts = 0

    # -- verification ------------------------------------------------------

    def verify(self, pp: PaymentPayload, pr: PaymentRequirements) -> Verdict:
        """Payload/quote consistency check; never consults the chain."""
        now = self.chain.loop.now
        verdict = self._verify_inner(pp, pr, now)
        self.chain.trace.emit(now, "facilitator", "verify_verdict",
                              pay_id=pp.pay_id_hex(), is_valid=verdict.is_valid,
                              reason=verdict.reason)
        return verdict

    def _verify_inner(self, pp: PaymentPayload, pr: PaymentRequirements,
                      now: int) -> Verdict:
        if self.config.mode is FacilitatorMode.BYZANTINE:
            return Verdict(True)
        result = verify_payload(pp, self.provider)
        if not result.ok:
            return Verdict(False, result.reason)
        if pp.amount < pr.amount:
            return Verdict(False, "Underpaid")
        if pp.chain_id != pr.chain_id:
            return Verdict(False, "WrongChain")
        if now > pr.expiry:
            return Verdict(False, "Expired")
        fresh = validate_freshness(pp, now, self.config.freshness_window_ms)
        if fresh is not Freshness.OK:
            return Verdict(False, fresh.value)
        return Verdict(True)

    # -- settlement --------------------------------------------------------

    def settle(self, pp: PaymentPayload, pr: PaymentRequirements) -> SettleHandle:
        """Submit the settlement and schedule the mode-dependent report."""
        loop = self.chain.loop
        trace = self.chain.trace
        self.settle_attempts += 1
        handle = SettleHandle(None, Future(loop), Future(loop))

        if self.config.mode is FacilitatorMode.BYZANTINE:
            if float(self.rng.random()) < self.config.premature_report_prob:
                # The lie: nothing is submitted, success is asserted anyway.
                report_at = loop.now + self.config.verify_latency_ms
                trace.emit(loop.now, "facilitator", "settle_skipped",
                           pay_id=pp.pay_id_hex())

                def lie() -> None:
                    trace.emit(loop.now, "facilitator", "report_final",
                               pay_id=pp.pay_id_hex(), tx_hash=None,
                               confirmations=0, premature=True)
                    handle.reserved.resolve(True)
                    handle.outcome.resolve(SettleReport(True, None, loop.now))

                loop.at(report_at, lie)
                return handle

        auth = Authorization(pp, pr.receiver, pr.expiry)
        try:
            if self.config.settlement_path is SettlementPath.PERMIT2:
                witness = pp.facilitator if self.config.permit2.witness_has_facilitator else None
                tx_hash = self.contracts.permit2_settle(auth, witness, self.addr,
                                                        self.config.permit2)
            else:
                tx_hash = self.contracts.transfer_with_authorization(auth, self.addr)
        except SettlementError as err:
            handle.reserved.resolve(False)
            handle.outcome.resolve(SettleReport(False, None, None, err.reason))
            return handle

        handle.tx_hash = tx_hash
        tx = self.chain.txs[tx_hash]
        loop.at(tx.included_at, lambda: handle.reserved.resolve(
            self.chain.status(tx_hash) == "included"))

        if self.config.mode is FacilitatorMode.HONEST:
            report_at = max(loop.now, self.chain.time_of_confirmations(
                tx_hash, self.config.report_depth))
        elif self.config.bug_signal == "mempool":
            report_at = loop.now
        else:
            report_at = max(loop.now, self.chain.time_of_confirmations(tx_hash, 1))

        def report() -> None:
            confs = self.chain.confirmations(tx_hash)
            if self.chain.status(tx_hash) == "dropped":
                trace.emit(loop.now, "facilitator", "settle_report",
                           pay_id=pp.pay_id_hex(), tx_hash=tx_hash,
                           ok=False, error="Reverted")
                handle.outcome.resolve(SettleReport(False, tx_hash, None, "Reverted"))
                return
            premature = confs < self.config.report_depth
            if self.config.mode is FacilitatorMode.HONEST and premature:
                # Deterministic honest view: never report early; re-check at
                # the recomputed finality time (reorgs only delay finality of
                # other txs, never this one's schedule, so this re-arm is a
                # guard rather than an expected path).
                loop.at(self.chain.time_of_confirmations(
                    tx_hash, self.config.report_depth), report)
                return
            trace.emit(loop.now, "facilitator", "report_final",
                       pay_id=pp.pay_id_hex(), tx_hash=tx_hash,
                       confirmations=confs, premature=premature)
            handle.outcome.resolve(SettleReport(True, tx_hash, loop.now))

        loop.at(report_at, report)
        trace.emit(loop.now, "facilitator", "settle_submitted",
                   pay_id=pp.pay_id_hex(), tx_hash=tx_hash)
        return handle

    def report_final(self, tx_hash: str, t: int | None = None) -> bool:
        """Honest finality predicate over the local chain view."""
        return self.chain.is_final(tx_hash, self.config.report_depth, t)
