import hashlib

import pytest

from hotstuffsim.CryptoProvider import AuthenticatorLedger, MockCryptoProvider
from hotstuffsim.model.Base import DigestCollision, InsufficientShares, MismatchedPayload, MsgType, SignerOutOfRange
from hotstuffsim.model.MsgModel import ProtocolMsg


def test_combine_and_verify(crypto):
    parts = {crypto.tsign(i, b"m") for i in range(3)}
    sig = crypto.tcombine(b"m", parts)
    assert crypto.tverify(b"m", sig)
    assert sig.signers == [0, 1, 2]
    assert not crypto.tverify(b"other", sig)


def test_hash_is_deterministic(crypto):
    assert crypto.hash(b"abc") == crypto.hash(b"abc")
    assert len(crypto.hash(b"abc")) == 64
    assert crypto.hash(b"abc") != crypto.hash(b"abd")


def test_duplicate_signer_counts_once(crypto):
    parts = [crypto.tsign(0, b"m"), crypto.tsign(0, b"m"), crypto.tsign(1, b"m")]
    with pytest.raises(InsufficientShares):
        crypto.tcombine(b"m", parts)


def test_signer_out_of_range(crypto):
    with pytest.raises(SignerOutOfRange):
        crypto.tsign(4, b"m")


def test_mismatched_payload(crypto):
    parts = [crypto.tsign(0, b"m"), crypto.tsign(1, b"m"), crypto.tsign(2, b"x")]
    with pytest.raises(MismatchedPayload):
        crypto.tcombine(b"m", parts)


def test_other_seed_cannot_verify(crypto):
    sig = crypto.tcombine(b"m", {crypto.tsign(i, b"m") for i in range(4)})
    other = MockCryptoProvider(n=4, f=1, seed=1)
    assert not other.tverify(b"m", sig)


def test_forged_part_is_ignored(crypto):
    good = [crypto.tsign(i, b"m") for i in range(2)]
    forged = crypto.tsign(2, b"m").model_copy(update={"tag": "0" * 64})
    with pytest.raises(InsufficientShares):
        crypto.tcombine(b"m", [*good, forged])


def test_ledger_counts_votes_and_certificates(crypto, tree):
    ledger = AuthenticatorLedger(4)
    node = tree.genesis
    vote = ProtocolMsg(mtype=MsgType.GENERIC, view=1, sender=0, node=node, partial_sig=crypto.tsign(0, b"m"))
    bare = ProtocolMsg(mtype=MsgType.NEW_VIEW, view=1, sender=0)
    carrying = ProtocolMsg(mtype=MsgType.NEW_VIEW, view=1, sender=0, node=node, justify=tree.genesis_qc)
    assert ledger.record(1, vote) == 1
    assert ledger.record(1, bare) == 0
    assert ledger.record(2, carrying) == 1
    assert ledger.received == [0, 1, 1, 0]
    assert ledger.total == 2


def test_tampered_tag_fails(crypto):
    sig = crypto.tcombine(b"m", {crypto.tsign(i, b"m") for i in range(3)})
    parts = sorted(sig.parts, key=lambda p: p.signer)
    flipped = parts[0].model_copy(update={"tag": ("1" if parts[0].tag[0] == "0" else "0") + parts[0].tag[1:]})
    tampered = sig.model_copy(update={"parts": frozenset([flipped, *parts[1:]])})
    assert not crypto.tverify(b"m", tampered)


class FirstByteDigest(MockCryptoProvider):
    """摘要只取决于首字节"""

    @staticmethod
    def _digest(payload: bytes) -> str:
        return hashlib.sha256(payload[:1]).hexdigest()


def test_digest_collision_is_detected():
    weak = FirstByteDigest(4, 1, track_collisions=True)
    digest = weak.hash(b"ab")
    assert weak.hash(b"ab") == digest
    with pytest.raises(DigestCollision):
        weak.hash(b"ac")

    untracked = FirstByteDigest(4, 1)
    assert untracked.hash(b"ab") == untracked.hash(b"ac")


def test_fixture_tracks_collisions(crypto, tree):
    assert crypto._registry is not None
    assert tree.genesis.id in crypto._registry
