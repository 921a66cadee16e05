"""Protocol parameters, quorum thresholds, and client request batching."""

from __future__ import annotations

from dataclasses import dataclass

# Upper bound on a single request payload; keeps batch encoding lengths sane.
MAX_PAYLOAD = 1 << 20

BATCH_HEADER = 2        # request count, uint16
REQUEST_OVERHEAD = 6    # tag length (uint16) + payload length (uint32)


@dataclass(frozen=True)
class ProtocolParams:
    """Global constants of one deployment.

    n parties, at most f Byzantine, committee of kappa proposers per epoch,
    at most batch_size requests per proposal, K-byte shares/signatures, and
    a 64-bit seed from which all run randomness derives.
    """

    n: int
    f: int
    kappa: int
    batch_size: int
    K: int
    seed: int

    def __post_init__(self):
        for name in ("n", "f", "kappa", "batch_size", "K", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.n != 3 * self.f + 1:
            raise ValueError(f"n must equal 3f + 1 (got n={self.n}, f={self.f})")
        if not 1 <= self.kappa <= self.n:
            raise ValueError(f"kappa must be in [1, n] (got kappa={self.kappa}, n={self.n})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.seed >= 1 << 64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class Thresholds:
    sig_t: int   # sign-shares needed for a delivery proof
    coin_t: int  # coin shares needed for a toss
    dec_t: int   # decryption shares needed to open a ciphertext


def validate_params(n: int, f: int, kappa: int | None = None, batch_size: int = 8,
                    K: int = 32, seed: int = 0) -> ProtocolParams:
    """Validate and freeze a parameter set. kappa defaults to f + 1."""
    if kappa is None:
        kappa = f + 1
    return ProtocolParams(n=n, f=f, kappa=kappa, batch_size=batch_size, K=K, seed=seed)


def derive_thresholds(params: ProtocolParams) -> Thresholds:
    """sig_t = 2f+1 guarantees at least f+1 honest signers behind every proof."""
    return Thresholds(sig_t=2 * params.f + 1, coin_t=params.f + 1, dec_t=params.f + 1)


@dataclass(frozen=True, order=True)
class Request:
    """A client request: opaque payload plus a tag used for deduplication."""

    client_tag: bytes
    payload: bytes

    def __post_init__(self):
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload exceeds {MAX_PAYLOAD} bytes")
        if len(self.client_tag) > 0xFFFF:
            raise ValueError("client_tag too long")


def encode_batch(requests: list[Request]) -> bytes:
    """Canonical batch encoding: count, then (tag_len, tag, payload_len, payload)."""
    if len(requests) > 0xFFFF:
        raise ValueError("too many requests in one batch")
    out = bytearray(len(requests).to_bytes(2, "little"))
    for r in requests:
        out += len(r.client_tag).to_bytes(2, "little")
        out += r.client_tag
        out += len(r.payload).to_bytes(4, "little")
        out += r.payload
    return bytes(out)


def decode_batch(data: bytes) -> list[Request]:
    if len(data) < BATCH_HEADER:
        raise ValueError("batch too short")
    count = int.from_bytes(data[:2], "little")
    pos = 2
    out = []
    for _ in range(count):
        if pos + 2 > len(data):
            raise ValueError("truncated batch")
        tlen = int.from_bytes(data[pos:pos + 2], "little")
        pos += 2
        tag = data[pos:pos + tlen]
        pos += tlen
        if pos + 4 > len(data) or len(tag) != tlen:
            raise ValueError("truncated batch")
        plen = int.from_bytes(data[pos:pos + 4], "little")
        pos += 4
        payload = data[pos:pos + plen]
        pos += plen
        if len(payload) != plen:
            raise ValueError("truncated batch")
        out.append(Request(client_tag=tag, payload=payload))
    if pos != len(data):
        raise ValueError("trailing bytes in batch")
    return out


def batch_encoded_size(requests: list[Request]) -> int:
    return BATCH_HEADER + sum(REQUEST_OVERHEAD + len(r.client_tag) + len(r.payload) for r in requests)
