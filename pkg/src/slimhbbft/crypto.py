"""Dealer-based threshold cryptography, simulation grade.

A trusted dealer (derived from the run seed) hands every party a share
secret. Shares are keyed digests of that material; combining checks count,
signer distinctness, and share validity, then re-derives the result from
the dealer secret, so every valid quorum of shares yields byte-identical
output and the whole provider is a pure function of (seed, inputs).

This is not secure against real cryptographic adversaries. It gives the
simulator exactly what it needs: shares that at most f colluding parties
cannot extend into a signature, a coin prediction, or a plaintext. A real
pairing-based provider can be swapped in behind the same surface.

K doubles as the byte length of every share, signature, coin share, and
ciphertext header.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass


class CryptoError(Exception):
    pass


class InsufficientShares(CryptoError):
    pass


class InvalidShare(CryptoError):
    def __init__(self, message: str, culprit: int | None = None):
        super().__init__(message)
        self.culprit = culprit


class IntegrityError(CryptoError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _prf(key: bytes, label: bytes, data: bytes, length: int) -> bytes:
    """Counter-mode SHA-256 expansion keyed by `key`, domain-separated by `label`."""
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + b"|" + label + b"|" + data + counter.to_bytes(4, "little")).digest()
        counter += 1
    return bytes(out[:length])


def stretch_digest(data: bytes, length: int) -> bytes:
    """Unkeyed digest stretched or truncated to `length` bytes (wire padding)."""
    return _prf(b"", b"pad", data, length)


def _xor(data: bytes, keystream: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, keystream))


@dataclass(frozen=True)
class SigShare:
    signer: int
    msg_digest: bytes
    share_bytes: bytes


@dataclass(frozen=True)
class ThresholdSig:
    msg_digest: bytes
    sig_bytes: bytes
    signer_set: frozenset[int]  # retained for audit only, not on the wire


@dataclass(frozen=True)
class CoinShare:
    party: int
    coin_id: bytes
    share_bytes: bytes


@dataclass(frozen=True)
class Ciphertext:
    epoch: int
    proposer: int
    ct_bytes: bytes


@dataclass(frozen=True)
class DecShare:
    party: int
    ct_ref: bytes
    share_bytes: bytes


class CryptoProvider:
    """Threshold signatures, common coin, and threshold encryption for n parties."""

    def __init__(self, n: int, f: int, K: int, seed: int):
        self.n = n
        self.f = f
        self.K = K
        self.seed = seed
        self.sig_t = 2 * f + 1
        self.coin_t = f + 1
        self.dec_t = f + 1
        self._dealer = hashlib.sha256(b"dealer|" + seed.to_bytes(8, "little")).digest()
        self._secrets = [_prf(self._dealer, b"party-secret", i.to_bytes(2, "little"), 32)
                         for i in range(n)]

    @classmethod
    def from_params(cls, params) -> "CryptoProvider":
        return cls(params.n, params.f, params.K, params.seed)

    # -- threshold signatures ------------------------------------------------

    def sign_share(self, party: int, message: bytes) -> SigShare:
        d = digest(message)
        return SigShare(party, d, _prf(self._secrets[party], b"sig", d, self.K))

    def verify_sig_share(self, share: SigShare, message: bytes) -> bool:
        d = digest(message)
        if share.msg_digest != d:
            return False
        if not 0 <= share.signer < self.n:
            return False
        return share.share_bytes == _prf(self._secrets[share.signer], b"sig", d, self.K)

    def combine_signature(self, message: bytes, shares, t: int | None = None) -> ThresholdSig:
        t = self.sig_t if t is None else t
        signers = set()
        for s in shares:
            if not self.verify_sig_share(s, message):
                raise InvalidShare(f"bad sign-share from party {s.signer}", culprit=s.signer)
            signers.add(s.signer)
        if len(signers) < t:
            raise InsufficientShares(f"{len(signers)} distinct valid signers, need {t}")
        d = digest(message)
        return ThresholdSig(d, _prf(self._dealer, b"tsig", d, self.K), frozenset(signers))

    def verify_threshold_sig(self, message: bytes, sig: ThresholdSig) -> bool:
        d = digest(message)
        return sig.msg_digest == d and sig.sig_bytes == _prf(self._dealer, b"tsig", d, self.K)

    # -- common coin ---------------------------------------------------------

    def coin_share(self, party: int, coin_id: bytes) -> CoinShare:
        return CoinShare(party, coin_id, _prf(self._secrets[party], b"coin", coin_id, self.K))

    def coin_verify(self, share: CoinShare) -> bool:
        if not 0 <= share.party < self.n:
            return False
        return share.share_bytes == _prf(self._secrets[share.party], b"coin", share.coin_id, self.K)

    def coin_toss(self, coin_id: bytes, shares, k: int) -> list[int]:
        """First k entries of a pseudorandom permutation of the party set.

        The permutation depends only on (dealer secret, coin_id), so any
        valid coin_t-subset of shares produces the same output.
        """
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, n], got {k}")
        parties = set()
        for s in shares:
            if s.coin_id != coin_id or not self.coin_verify(s):
                raise InvalidShare(f"bad coin share from party {s.party}", culprit=s.party)
            parties.add(s.party)
        if len(parties) < self.coin_t:
            raise InsufficientShares(f"{len(parties)} distinct valid coin shares, need {self.coin_t}")
        rng = random.Random(int.from_bytes(_prf(self._dealer, b"toss", coin_id, 8), "little"))
        pool = list(range(self.n))
        rng.shuffle(pool)
        return pool[:k]

    # -- threshold encryption --------------------------------------------------

    def _enc_context(self, epoch: int, proposer: int) -> bytes:
        return struct.pack("<IH", epoch, proposer)

    def encrypt(self, epoch: int, proposer: int, plaintext: bytes) -> Ciphertext:
        ctx = self._enc_context(epoch, proposer)
        tag = _prf(self._dealer, b"enc-tag", ctx, self.K)
        ks = _prf(self._dealer, b"enc-ks", ctx, len(plaintext))
        return Ciphertext(epoch, proposer, tag + _xor(plaintext, ks))

    def decryption_share(self, party: int, ct: Ciphertext) -> DecShare:
        ref = digest(ct.ct_bytes)
        return DecShare(party, ref, _prf(self._secrets[party], b"dec", ref, self.K))

    def verify_dec_share(self, share: DecShare, ct: Ciphertext) -> bool:
        ref = digest(ct.ct_bytes)
        if share.ct_ref != ref or not 0 <= share.party < self.n:
            return False
        return share.share_bytes == _prf(self._secrets[share.party], b"dec", ref, self.K)

    def combine_decryption(self, ct: Ciphertext, shares) -> bytes:
        parties = set()
        for s in shares:
            if not self.verify_dec_share(s, ct):
                raise InvalidShare(f"bad decryption share from party {s.party}", culprit=s.party)
            parties.add(s.party)
        if len(parties) < self.dec_t:
            raise InsufficientShares(f"{len(parties)} distinct valid decryption shares, need {self.dec_t}")
        ctx = self._enc_context(ct.epoch, ct.proposer)
        if ct.ct_bytes[:self.K] != _prf(self._dealer, b"enc-tag", ctx, self.K):
            raise IntegrityError("ciphertext tag mismatch")
        body = ct.ct_bytes[self.K:]
        return _xor(body, _prf(self._dealer, b"enc-ks", ctx, len(body)))

    # -- setup persistence -----------------------------------------------------

    def save_keyfile(self, path) -> None:
        """Binary dump of the dealer setup so a separate process can replay a run."""
        with open(path, "wb") as fh:
            fh.write(b"SHBK")
            fh.write(struct.pack("<HHHQ", self.n, self.f, self.K, self.seed))
            fh.write(self._dealer)
            for s in self._secrets:
                fh.write(s)

    @classmethod
    def load_keyfile(cls, path) -> "CryptoProvider":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != b"SHBK":
            raise ValueError("not a key file")
        n, f, K, seed = struct.unpack_from("<HHHQ", data, 4)
        provider = cls(n, f, K, seed)
        dealer = data[18:50]
        secrets = [data[50 + 32 * i: 82 + 32 * i] for i in range(n)]
        if dealer != provider._dealer or secrets != provider._secrets:
            raise ValueError("key file does not match its seed")
        return provider

    def adversary_view(self, corrupt) -> "AdversaryView":
        return AdversaryView(self, corrupt)


class AdversaryView:
    """What a coalition of corrupt parties can compute: its own shares, nothing keyed
    by the dealer secret. Used by the unpredictability and unforgeability tests."""

    def __init__(self, provider: CryptoProvider, corrupt):
        self.n = provider.n
        self.K = provider.K
        self.coin_t = provider.coin_t
        self.dec_t = provider.dec_t
        self.corrupt = frozenset(corrupt)
        if len(self.corrupt) > provider.f:
            raise ValueError("adversary coalition larger than f")
        self._secrets = {p: provider._secrets[p] for p in self.corrupt}

    def coin_share(self, party: int, coin_id: bytes) -> CoinShare:
        if party not in self.corrupt:
            raise KeyError(f"party {party} is not corrupt")
        return CoinShare(party, coin_id, _prf(self._secrets[party], b"coin", coin_id, self.K))

    def forge_threshold_sig(self, message: bytes) -> ThresholdSig:
        """Best-effort forgery from coalition material alone."""
        d = digest(message)
        key = b"".join(self._secrets[p] for p in sorted(self.corrupt))
        return ThresholdSig(d, _prf(key, b"forged", d, self.K), frozenset(self.corrupt))

    def guess_toss(self, coin_id: bytes, k: int) -> list[int]:
        """Committee guess before any honest share is revealed; the coalition holds
        fewer than coin_t shares, so this cannot be correlated with the real toss."""
        key = b"".join(self._secrets[p] for p in sorted(self.corrupt))
        rng = random.Random(int.from_bytes(_prf(key, b"guess", coin_id, 8), "little"))
        pool = list(range(self.n))
        rng.shuffle(pool)
        return pool[:k]

    def try_decrypt(self, ct: Ciphertext) -> bytes:
        shares = [DecShare(p, digest(ct.ct_bytes),
                           _prf(self._secrets[p], b"dec", digest(ct.ct_bytes), self.K))
                  for p in sorted(self.corrupt)]
        if len(shares) < self.dec_t:
            raise InsufficientShares(f"coalition holds {len(shares)} shares, needs {self.dec_t}")
        return b""  # unreachable at |corrupt| <= f since dec_t = f + 1
