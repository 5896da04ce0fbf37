import numpy as np
import pytest

from utilsignal import hashing as H
from utilsignal.hashing import BLOCK, IV, compress, md_hash
from utilsignal.sharing import Session
from utilsignal.transport import AddOffset, AdversaryScript, ProtocolAbort

REGRESSION_00 = bytes.fromhex("b5c1071eb6079822b62614b0159dddb9")


def _bytes_rng(rng, n):
    return rng.integers(0, 256, n, dtype=np.uint8).tobytes()


def _ref_encrypt(key_bits, pt_bits):
    """Bit-at-a-time cipher from the published round material."""
    spec = H.cipher_spec()
    key = [int(v) for v in key_bits]

    def mat(m, x):
        return [sum(int(m[i][j]) & x[j] for j in range(BLOCK)) & 1 for i in range(BLOCK)]

    rk = [mat(spec.keymats[r], key) for r in range(spec.rounds + 1)]
    s = [int(p) ^ k for p, k in zip(pt_bits, rk[0])]
    for r in range(spec.rounds):
        for i in range(H.N_SBOX):
            a, b, c = s[3 * i:3 * i + 3]
            s[3 * i:3 * i + 3] = [a ^ (b & c), a ^ b ^ (a & c), a ^ b ^ c ^ (a & b)]
        s = mat(spec.lin[r], s)
        s = [v ^ int(cr) ^ k for v, cr, k in zip(s, spec.consts[r], rk[r + 1])]
    return s


def test_cipher_matches_bitwise_reference(rng):
    for _ in range(3):
        key, pt = rng.integers(0, 2, BLOCK), rng.integers(0, 2, BLOCK)
        assert H.encrypt_bits(key, pt).tolist() == _ref_encrypt(key, pt)


def test_decrypt_inverts(rng):
    key, pt = _bytes_rng(rng, 16), _bytes_rng(rng, 16)
    assert H.decrypt(key, H.encrypt(key, pt)) == pt


def test_compress_deterministic_and_regression(rng):
    h, b = _bytes_rng(rng, 16), _bytes_rng(rng, 16)
    assert len({compress(h, b) for _ in range(10)}) == 1
    assert compress(IV, bytes(16)) == REGRESSION_00
    assert compress(IV, bytes(16)) == H.encrypt(bytes(16), IV)  # Enc_0(0) xor 0


def test_compress_width_errors():
    with pytest.raises(ValueError):
        compress(IV, bytes(15))
    with pytest.raises(ValueError):
        compress(bytes(17), bytes(16))


def test_avalanche(rng):
    n = 1000
    h = rng.integers(0, 2, (n, BLOCK), dtype=np.uint8)
    b = rng.integers(0, 2, (n, BLOCK), dtype=np.uint8)
    flip = b.copy()
    flip[np.arange(n), rng.integers(0, BLOCK, n)] ^= 1
    diff = (H.compress_bits(h, b) != H.compress_bits(h, flip)).sum(axis=1)
    assert diff.mean() >= 30


def test_md_hash_empty_and_manual_chain(rng):
    assert md_hash(b"") == compress(IV, H.md_pad(b""))
    data = _bytes_rng(rng, 30)  # pads to three blocks
    padded = data + b"\x80" + bytes(48 - 30 - 9) + (240).to_bytes(8, "big")
    assert H.md_pad(data) == padded
    h = IV
    for i in range(3):
        h = compress(h, padded[16 * i:16 * i + 16])
    assert md_hash(data) == h


def test_md_sensitivity(rng):
    xs = [_bytes_rng(rng, 32) for _ in range(1000)]
    flipped = []
    for x in xs:
        i = int(rng.integers(0, 256))
        y = bytearray(x)
        y[i // 8] ^= 0x80 >> (i % 8)
        flipped.append(bytes(y))
    a, b = H.md_hash_many(xs), H.md_hash_many(flipped)
    assert all(u != v for u, v in zip(a, b))
    assert a[:5] == [md_hash(x) for x in xs[:5]]


def test_compress_calls_per_leaf():
    # a 1024-bit leaf is 8 data blocks plus one padding block
    assert H.md_compress_calls(128) == 9
    assert H.md_compress_calls(0) == 1


def _shared_bits(s, data):
    return s.input(0, H.to_bits(data).astype(np.uint64))


def test_mpc_compress_matches_plain(rng):
    s = Session(3, seed=5)
    hs = [_bytes_rng(rng, 16) for _ in range(20)]
    bs = [_bytes_rng(rng, 16) for _ in range(20)]
    hv = s.input(0, np.stack([H.to_bits(h) for h in hs]).astype(np.uint64))
    bv = s.input(1, np.stack([H.to_bits(b) for b in bs]).astype(np.uint64))
    out = s.open(H.mpc_compress(s, hv, bv))
    assert [H.from_bits(r.astype(np.uint8)) for r in out] == [compress(h, b) for h, b in zip(hs, bs)]
    assert s.counters["and"] == 300 * 20
    assert s.counters["and"] / (20 * BLOCK) < 5
    s.finish()


def test_mpc_compress_zero_regression():
    s = Session(3, seed=1, authenticated=False)
    z = s.public(np.zeros(BLOCK, dtype=np.uint64))
    assert H.from_bits(s.open(H.mpc_compress(s, z, z)).astype(np.uint8)) == REGRESSION_00


def test_mpc_compress_and_gate_offset_aborts():
    s = Session(3, seed=1, script=AdversaryScript.single(2, "open:compress/and", AddOffset(1), 4))
    z = s.public(np.zeros(BLOCK, dtype=np.uint64))
    H.mpc_compress(s, z, _shared_bits(s, bytes(16)))
    with pytest.raises(ProtocolAbort) as e:
        s.finish()
    assert e.value.reason == "mac-check"


def test_mpc_md_hash(rng):
    s = Session(3, seed=2)
    data = _bytes_rng(rng, 37)
    got = s.output(H.mpc_md_hash(s, _shared_bits(s, data), len(data)))
    assert H.from_bits(got.astype(np.uint8)) == md_hash(data)


def _leaves(n):
    return [md_hash(bytes([i])) for i in range(n)]


def test_mht_shapes():
    l = _leaves(4)
    assert H.mht_commit(l[:1]).root == l[0]
    assert H.mht_commit(l).root == H.node_hash(H.node_hash(l[0], l[1]), H.node_hash(l[2], l[3]))
    assert H.mht_commit(l[:3]).root == H.node_hash(H.node_hash(l[0], l[1]), l[2])
    assert H.node_hash(l[0], l[1]) == compress(compress(IV, l[0]), l[1])
    with pytest.raises(ValueError):
        H.mht_commit([])


def test_mht_proofs():
    l = _leaves(8)
    t = H.mht_commit(l)
    for i in range(8):
        assert H.mht_verify(H.mht_gen_proof(t, i), l[i], t.root)
    bad_leaf = bytes([l[3][0] ^ 1]) + l[3][1:]
    assert not H.mht_verify(H.mht_gen_proof(t, 3), bad_leaf, t.root)
    p = H.mht_gen_proof(t, 5)
    sib, side = p.steps[1]
    tampered = H.MerklePath(5, (p.steps[0], (bytes([sib[0] ^ 1]) + sib[1:], side)) + p.steps[2:])
    assert not H.mht_verify(tampered, l[5], t.root)
    with pytest.raises(IndexError):
        H.mht_gen_proof(t, 8)


@pytest.mark.parametrize("n", [5, 7, 13])
def test_mht_odd_counts(n):
    l = _leaves(n)
    t = H.mht_commit(l)
    assert all(H.mht_verify(H.mht_gen_proof(t, i), l[i], t.root) for i in range(n))


def test_commitment_roundtrip(tmp_path):
    c = H.Commitment(1024, "MHT", md_hash(b"x"))
    assert H.Commitment.parse(c.line()) == c
    H.write_commitments([c], tmp_path / "c.txt")
    assert H.read_commitments(tmp_path / "c.txt") == [c]
    with pytest.raises(ValueError):
        H.Commitment.parse("1,1024,XYZ,00")
