"""Token ledger and the two settlement-contract models.

transfer_with_authorization mimics single-use-nonce authorizations that any
caller may submit (the preemption surface); permit2_settle adds an optional
caller-binding witness check. Settlement transactions enter the chain like
any tx; a reverted settlement un-consumes its nonce and restores balances.

The contract layer verifies the payer's signature over the payment payload's
canonical bytes. The transfer destination is a call argument rather than a
signed field; destination-redirect attacks are outside this model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .messages import PaymentPayload, SignatureProvider, verify_payload

if TYPE_CHECKING:
    from .chain import Chain


class SettlementError(RuntimeError):
    reason = "SettlementError"


class NonceConsumed(SettlementError):
    reason = "NonceConsumed"


class Expired(SettlementError):
    reason = "Expired"


class BadSignature(SettlementError):
    reason = "BadSignature"


class CallerMismatch(SettlementError):
    reason = "CallerMismatch"


class InsufficientBalance(SettlementError):
    reason = "InsufficientBalance"


@dataclass(frozen=True)
class Authorization:
    """Observed payment capability: the signed payload plus transfer routing."""

    payload: PaymentPayload
    receiver: str
    valid_before: int

    def nonce_key(self) -> tuple[str, str]:
        return (self.payload.payer_addr, self.payload.nonce.hex())


@dataclass(frozen=True)
class Permit2Config:
    witness_has_facilitator: bool = False
    enforce_caller: bool = False

    def __post_init__(self) -> None:
        if self.enforce_caller and not self.witness_has_facilitator:
            raise ValueError("caller enforcement requires a facilitator witness")


class TokenLedger:
    """Balances plus per-authorizer nonce tracking, shared by both contracts."""

    def __init__(self, provider: SignatureProvider) -> None:
        self.provider = provider
        self.balances: dict[str, int] = {}
        self.used_nonces: dict[tuple[str, str], str] = {}  # nonce key -> tx hash
        self._tx_counter = 0

    def mint(self, addr: str, amount: int) -> None:
        self.balances[addr] = self.balances.get(addr, 0) + amount

    def balance_of(self, addr: str) -> int:
        return self.balances.get(addr, 0)

    def total_supply(self) -> int:
        return sum(self.balances.values())

    def _next_tx_hash(self, auth: Authorization, caller: str) -> str:
        self._tx_counter += 1
        seed = f"{auth.payload.pay_id_hex()}:{caller}:{self._tx_counter}".encode()
        return "0x" + hashlib.sha256(seed).hexdigest()[:40]

    def _checked_transfer(self, auth: Authorization, caller: str, now: int) -> None:
        result = verify_payload(auth.payload, self.provider)
        if not result.ok:
            raise BadSignature(result.reason)
        if now > auth.valid_before:
            raise Expired(f"authorization expired at {auth.valid_before}")
        if auth.nonce_key() in self.used_nonces:
            raise NonceConsumed(str(auth.nonce_key()))
        if self.balance_of(auth.payload.payer_addr) < auth.payload.amount:
            raise InsufficientBalance(auth.payload.payer_addr)

    def _apply(self, auth: Authorization, tx_hash: str) -> None:
        amount = auth.payload.amount
        payer = auth.payload.payer_addr
        self.balances[payer] = self.balance_of(payer) - amount
        self.balances[auth.receiver] = self.balance_of(auth.receiver) + amount
        self.used_nonces[auth.nonce_key()] = tx_hash

    def revert_settlement(self, auth: Authorization, tx_hash: str) -> None:
        """Reorg semantics: undo the transfer and free the nonce."""
        if self.used_nonces.get(auth.nonce_key()) != tx_hash:
            return
        amount = auth.payload.amount
        payer = auth.payload.payer_addr
        self.balances[payer] = self.balance_of(payer) + amount
        self.balances[auth.receiver] = self.balance_of(auth.receiver) - amount
        del self.used_nonces[auth.nonce_key()]


class SettlementContracts:
    """Contract entry points, serialized through the owning simulation."""

    def __init__(self, ledger: TokenLedger, chain: "Chain") -> None:
        self.ledger = ledger
        self.chain = chain

    def _settle(self, auth: Authorization, caller: str, contract: str) -> str:
        now = self.chain.loop.now
        trace = self.chain.trace
        try:
            self.ledger._checked_transfer(auth, caller, now)
        except SettlementError as err:
            trace.emit(now, "ledger", "settle_failed", contract=contract,
                       caller=caller, authorizer=auth.payload.payer_addr,
                       nonce=auth.payload.nonce, amount=auth.payload.amount,
                       pay_id=auth.payload.pay_id_hex(), outcome=err.reason)
            raise
        tx_hash = self.ledger._next_tx_hash(auth, caller)
        self.ledger._apply(auth, tx_hash)
        tx = self.chain.broadcast(tx_hash, caller, pay_id=auth.payload.pay_id_hex())
        tx.meta["auth"] = auth
        trace.emit(now, "ledger", "settle_ok", contract=contract, tx_hash=tx_hash,
                   caller=caller, authorizer=auth.payload.payer_addr,
                   nonce=auth.payload.nonce, amount=auth.payload.amount,
                   pay_id=auth.payload.pay_id_hex(), outcome="ok")
        return tx_hash

    def transfer_with_authorization(self, auth: Authorization, caller: str) -> str:
        """Caller-unbound settlement: any holder of the authorization may submit."""
        return self._settle(auth, caller, "transfer_with_authorization")

    def permit2_settle(self, auth: Authorization, witness: str | None,
                       caller: str, cfg: Permit2Config) -> str:
        """Witness-checked settlement; caller binding only when configured.

        The witness value is authenticated against the payload's signed
        facilitator field, so a forged witness fails signature checking
        before any caller comparison.
        """
        now = self.chain.loop.now
        if cfg.witness_has_facilitator and witness != auth.payload.facilitator:
            self.chain.trace.emit(now, "ledger", "settle_failed", contract="permit2",
                                  caller=caller, authorizer=auth.payload.payer_addr,
                                  nonce=auth.payload.nonce, amount=auth.payload.amount,
                                  pay_id=auth.payload.pay_id_hex(), outcome="BadSignature")
            raise BadSignature("witness does not match signed facilitator")
        if cfg.enforce_caller and caller != witness:
            self.chain.trace.emit(now, "ledger", "settle_failed", contract="permit2",
                                  caller=caller, authorizer=auth.payload.payer_addr,
                                  nonce=auth.payload.nonce, amount=auth.payload.amount,
                                  pay_id=auth.payload.pay_id_hex(), outcome="CallerMismatch")
            raise CallerMismatch(f"{caller} != {witness}")
        return self._settle(auth, caller, "permit2")

    def process_reorg(self, dropped: set[str]) -> None:
        """Roll back ledger effects for settlements removed by a reorg."""
        for tx_hash in sorted(dropped):
            tx = self.chain.txs.get(tx_hash)
            if tx is None:
                continue
            auth = tx.meta.get("auth")
            if auth is not None:
                self.ledger.revert_settlement(auth, tx_hash)
                self.chain.trace.emit(self.chain.loop.now, "ledger", "settle_reverted",
                                      tx_hash=tx_hash, pay_id=auth.payload.pay_id_hex())
