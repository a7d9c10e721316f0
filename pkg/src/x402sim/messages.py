"""Payment message types, canonical encoding, signatures, and freshness.

Canonical encoding: fields sorted by ASCII name, rendered as ``name=value``
pairs joined by ``\\n``; integers in decimal without leading zeros, byte
fields lowercase hex, absent optional fields omitted. pay_id is the SHA-256
digest of the canonical bytes, and the payer's signature covers the same
bytes, so semantically equal payloads share one identity no matter how a
source representation ordered or formatted them.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field, replace
from typing import Mapping

PAY_ID_HASH = "sha256"

# Signed payload fields. resource_id / facilitator are present only when the
# corresponding binding mitigation is enabled, and are signed when present.
MANDATORY_FIELDS = ("amount", "chain_id", "nonce", "payer_addr", "ts")
OPTIONAL_FIELDS = ("facilitator", "resource_id")


class MissingField(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"mandatory field absent: {name}")
        self.name = name


class UnknownSigner(KeyError):
    pass


@dataclass(frozen=True)
class PaymentRequirements:
    """Quote returned with a 402: what to pay, where, and until when."""

    resource_id: str
    amount: int
    token: str
    chain_id: int
    receiver: str
    expiry: int
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise ValueError("amount must be positive")
        if not self.resource_id:
            raise ValueError("resource_id must be non-empty")
        if self.expiry < 0:
            raise ValueError("expiry must be a valid logical time")

    def to_json(self) -> dict:
        return {
            "resource_id": self.resource_id,
            "amount": self.amount,
            "token": self.token,
            "chain_id": self.chain_id,
            "receiver": self.receiver,
            "expiry": self.expiry,
            "meta": dict(self.meta),
        }


@dataclass(frozen=True)
class PaymentPayload:
    """Signed payment presented in the X-PAYMENT header."""

    payment_id: bytes
    payer_addr: str
    amount: int
    chain_id: int
    nonce: bytes
    ts: int
    sigma: bytes
    resource_id: str | None = None
    facilitator: str | None = None

    def signed_fields(self) -> dict:
        fields = {
            "payer_addr": self.payer_addr,
            "amount": self.amount,
            "chain_id": self.chain_id,
            "nonce": self.nonce,
            "ts": self.ts,
        }
        if self.resource_id is not None:
            fields["resource_id"] = self.resource_id
        if self.facilitator is not None:
            fields["facilitator"] = self.facilitator
        return fields

    def pay_id_hex(self) -> str:
        return self.payment_id.hex()


def _render_value(value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean has no canonical rendering")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, str):
        if "\n" in value or "=" in value:
            raise ValueError("string fields must not contain newline or '='")
        return value
    raise TypeError(f"unsupported field type: {type(value).__name__}")


def canonical_encode(fields: Mapping[str, object]) -> bytes:
    """Render payload fields to the canonical byte sequence.

    Raises MissingField for an absent mandatory field; unknown extra fields
    are rejected so that two parties can never sign different supersets.
    """
    for name in MANDATORY_FIELDS:
        if name not in fields or fields[name] is None:
            raise MissingField(name)
    allowed = set(MANDATORY_FIELDS) | set(OPTIONAL_FIELDS)
    for name in fields:
        if name not in allowed:
            raise ValueError(f"unknown field: {name}")
    present = {k: v for k, v in fields.items() if v is not None}
    lines = [f"{name}={_render_value(present[name])}" for name in sorted(present)]
    return "\n".join(lines).encode("ascii")


def canonical_decode(blob: bytes) -> dict[str, str]:
    """Parse canonical bytes back to a name -> string-value map."""
    out: dict[str, str] = {}
    for line in blob.decode("ascii").split("\n"):
        name, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed canonical line: {line!r}")
        out[name] = value
    return out


def derive_pay_id(fields: Mapping[str, object]) -> bytes:
    """SHA-256 digest of the canonical encoding; the payment identity."""
    return hashlib.sha256(canonical_encode(fields)).digest()


class SignatureMode(str, enum.Enum):
    WELL_FORMED = "well-formed"
    FORGEABLE_FOR_TEST = "forgeable-for-test"


class SignatureProvider:
    """Keyed-MAC signature registry with simulation-level unforgeability.

    In well-formed mode, verify(addr, msg, sig) succeeds exactly when sig was
    produced by sign() under addr's registered secret. forgeable-for-test mode
    accepts any signature, for tests that fabricate payloads without keys.
    """

    def __init__(self, mode: SignatureMode = SignatureMode.WELL_FORMED) -> None:
        self.mode = SignatureMode(mode)
        self._secrets: dict[str, bytes] = {}

    def register(self, addr: str, secret: bytes | None = None) -> str:
        if secret is None:
            secret = hashlib.sha256(b"key:" + addr.encode()).digest()
        self._secrets[addr] = secret
        return addr

    def knows(self, addr: str) -> bool:
        return addr in self._secrets

    def sign(self, addr: str, message: bytes) -> bytes:
        secret = self._secrets.get(addr)
        if secret is None:
            raise UnknownSigner(addr)
        return hmac.new(secret, message, hashlib.sha256).digest()

    def verify(self, addr: str, message: bytes, sig: bytes) -> bool:
        if self.mode is SignatureMode.FORGEABLE_FOR_TEST:
            return True
        secret = self._secrets.get(addr)
        if secret is None:
            return False
        expected = hmac.new(secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, sig)


def sign_payload(
    fields: Mapping[str, object],
    provider: SignatureProvider,
    signer: str,
) -> PaymentPayload:
    """Build a complete signed payload from its field values.

    The signer must match fields["payer_addr"] and be registered with the
    provider; payment_id and sigma are derived over the same canonical bytes.
    """
    if fields.get("payer_addr") != signer:
        raise UnknownSigner(f"signer {signer} does not match payer_addr")
    blob = canonical_encode(fields)
    sigma = provider.sign(signer, blob)
    return PaymentPayload(
        payment_id=hashlib.sha256(blob).digest(),
        payer_addr=str(fields["payer_addr"]),
        amount=int(fields["amount"]),  # type: ignore[arg-type]
        chain_id=int(fields["chain_id"]),  # type: ignore[arg-type]
        nonce=bytes(fields["nonce"]),  # type: ignore[arg-type]
        ts=int(fields["ts"]),  # type: ignore[arg-type]
        sigma=sigma,
        resource_id=fields.get("resource_id"),  # type: ignore[arg-type]
        facilitator=fields.get("facilitator"),  # type: ignore[arg-type]
    )


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_payload(pp: PaymentPayload, provider: SignatureProvider) -> VerifyResult:
    """Check sigma over the canonical bytes and payment_id against the digest."""
    try:
        blob = canonical_encode(pp.signed_fields())
    except (MissingField, ValueError, TypeError):
        return VerifyResult(False, "Malformed")
    if hashlib.sha256(blob).digest() != pp.payment_id:
        return VerifyResult(False, "IdMismatch")
    if not provider.verify(pp.payer_addr, blob, pp.sigma):
        return VerifyResult(False, "BadSignature")
    return VerifyResult(True)


class Freshness(str, enum.Enum):
    OK = "ok"
    STALE = "Stale"
    FUTURE_DATED = "FutureDated"


def validate_freshness(pp: PaymentPayload, now: int, window_ms: int) -> Freshness:
    """Accept ts within [now - W, now + W], both bounds inclusive."""
    if window_ms <= 0:
        raise ValueError("freshness window must be positive")
    if pp.ts < now - window_ms:
        return Freshness.STALE
    if pp.ts > now + window_ms:
        return Freshness.FUTURE_DATED
    return Freshness.OK


def with_mutated_amount(pp: PaymentPayload, amount: int) -> PaymentPayload:
    """Tampered copy: amount changed after signing (signature left stale)."""
    return replace(pp, amount=amount)
