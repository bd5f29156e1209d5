import numpy as np
import pytest

from beblid.descriptor import BinaryDescriptor, RealDescriptor
from beblid.matching import MatchResult, distance_matrix, hamming, l2_sq, match_nn


def random_binary(rng, n, nbits=512):
    return [BinaryDescriptor.from_bits(rng.integers(0, 2, size=nbits)) for _ in range(n)]


def oracle_hamming(a, b):
    return int(np.sum(a.bits() != b.bits()))


def test_hamming_self_is_zero(rng):
    d = random_binary(rng, 1)[0]
    assert hamming(d, d) == 0


def test_hamming_full_byte_disagreement():
    a = BinaryDescriptor(np.array([0x00], dtype=np.uint8), 8)
    b = BinaryDescriptor(np.array([0xFF], dtype=np.uint8), 8)
    assert hamming(a, b) == 8


def test_hamming_length_mismatch():
    a = BinaryDescriptor.from_bits([1, 0, 1])
    b = BinaryDescriptor.from_bits([1, 0, 1, 1])
    with pytest.raises(ValueError, match="length mismatch"):
        hamming(a, b)


def test_hamming_random_vs_bit_loop(rng):
    descs = random_binary(rng, 200, 512)
    for _ in range(10_000):
        i, j = rng.integers(0, 200, size=2)
        assert hamming(descs[i], descs[j]) == oracle_hamming(descs[i], descs[j])


def test_hamming_metric_properties(rng):
    descs = random_binary(rng, 30, 64)
    for _ in range(200):
        i, j, k = rng.integers(0, 30, size=3)
        a, b, c = descs[i], descs[j], descs[k]
        assert hamming(a, b) == hamming(b, a)
        assert (hamming(a, b) == 0) == (a == b)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


def test_l2_sq_basics():
    a = RealDescriptor(np.array([2.0]))
    b = RealDescriptor(np.array([-2.0]))
    assert l2_sq(a, a) == 0.0
    assert l2_sq(a, b) == 16.0
    with pytest.raises(ValueError, match="length mismatch"):
        l2_sq(a, RealDescriptor(np.array([1.0, 2.0])))


def test_l2_sq_random_oracle(rng):
    for _ in range(100):
        a = RealDescriptor(rng.normal(size=33))
        b = RealDescriptor(rng.normal(size=33))
        expect = sum((x - y) ** 2 for x, y in zip(a.values, b.values))
        assert l2_sq(a, b) == pytest.approx(expect, abs=1e-12)


def test_match_self(rng):
    descs = random_binary(rng, 20, 64)
    matches = match_nn(descs, descs)
    assert [m.train_index for m in matches] == list(range(20))
    assert all(m.distance == 0 for m in matches)


def test_match_single_train(rng):
    queries = random_binary(rng, 7, 32)
    train = random_binary(rng, 1, 32)
    matches = match_nn(queries, train)
    assert all(m.train_index == 0 for m in matches)


def test_match_vs_double_loop_oracle(rng):
    queries = random_binary(rng, 200, 64)
    train = random_binary(rng, 200, 64)
    got = match_nn(queries, train, metric="hamming")
    for m in got:
        dists = [oracle_hamming(queries[m.query_index], t) for t in train]
        best = min(dists)
        assert m.distance == best
        assert m.train_index == dists.index(best)  # lowest-index tie-break


def test_match_real_vs_oracle(rng):
    queries = [RealDescriptor(rng.normal(size=16)) for _ in range(60)]
    train = [RealDescriptor(rng.normal(size=16)) for _ in range(60)]
    got = match_nn(queries, train, metric="l2")
    for m in got:
        dists = [l2_sq(queries[m.query_index], t) for t in train]
        assert m.train_index == int(np.argmin(dists))


def test_match_tie_breaks_to_lowest_train_index(rng):
    d = random_binary(rng, 1, 32)[0]
    train = [d, d, d]
    matches = match_nn([d], train)
    assert matches == [MatchResult(0, 0, 0)]


def test_cross_check_keeps_mutual_only():
    def bd(bits):
        return BinaryDescriptor.from_bits(bits)

    # q0 <-> t0 mutual; q1 -> t0 but t0 -> q0, so q1 drops
    q0 = bd([0, 0, 0, 0, 0, 0, 0, 0])
    q1 = bd([1, 1, 1, 0, 0, 0, 0, 0])
    t0 = bd([0, 0, 0, 0, 0, 0, 0, 1])
    t1 = bd([1, 1, 1, 1, 1, 1, 1, 1])
    matches = match_nn([q0, q1], [t0, t1], cross_check=True)
    assert [(m.query_index, m.train_index) for m in matches] == [(0, 0)]


def test_match_permutation_equivariance(rng):
    queries = [RealDescriptor(rng.normal(size=8)) for _ in range(40)]
    train = [RealDescriptor(rng.normal(size=8)) for _ in range(40)]
    base = match_nn(queries, train)
    perm = rng.permutation(40)
    shuffled = [train[i] for i in perm]
    renamed = match_nn(queries, shuffled)
    for a, b in zip(base, renamed):
        assert perm[b.train_index] == a.train_index


def test_match_errors(rng):
    binary = random_binary(rng, 3, 16)
    real = [RealDescriptor(rng.normal(size=4)) for _ in range(3)]
    with pytest.raises(ValueError, match="empty train"):
        match_nn(binary, [])
    with pytest.raises(ValueError, match="type mismatch"):
        match_nn(binary, real)
    with pytest.raises(ValueError, match="does not apply"):
        match_nn(binary, binary, metric="l2")
    with pytest.raises(ValueError, match="length mismatch"):
        distance_matrix(binary, random_binary(rng, 2, 32))


def test_distance_matrix_chunking_consistent(rng):
    # big enough to exercise the chunked path
    queries = random_binary(rng, 300, 256)
    train = random_binary(rng, 97, 256)
    d = distance_matrix(queries, train)
    for qi in (0, 150, 299):
        for ti in (0, 50, 96):
            assert d[qi, ti] == oracle_hamming(queries[qi], train[ti])
