import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from andft.replay import ReplayQueue


def items(ids, d=2):
    ids = np.asarray(ids, dtype=float)
    return np.repeat(ids[:, None], d, axis=1), ids.astype(int)[:, None]


def contents(q):
    return [int(y[0]) for _, y in q]


def test_fifo_eviction():
    q = ReplayQueue(3, 2)
    q.enqueue_batch(*items([0, 1, 2]))
    q.enqueue_batch(*items([3]))
    assert contents(q) == [1, 2, 3]


def test_enqueue_into_empty():
    q = ReplayQueue(10, 2)
    q.enqueue_batch(*items([5, 6, 7]))
    assert len(q) == 3


def test_capacity_256_batches_of_32():
    q = ReplayQueue(256, 2)
    for b in range(8):
        q.enqueue_batch(*items(range(b * 32, (b + 1) * 32)))
    assert len(q) == 256
    q.enqueue_batch(*items(range(256, 288)))
    got = contents(q)
    assert len(got) == 256
    assert set(range(32)).isdisjoint(got)
    assert got == list(range(32, 288))


def test_enqueue_errors():
    q = ReplayQueue(4, 3)
    with pytest.raises(ValueError):
        q.enqueue_batch(np.zeros((5, 3)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        q.enqueue_batch(np.zeros((2, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ReplayQueue(0, 3)


def test_latest_batch():
    q = ReplayQueue(100, 2)
    F1, Y1 = items([1, 2, 3])
    F2, Y2 = items([4, 5, 6])
    q.enqueue_batch(F1, Y1)
    F, Y = q.latest_batch(3)
    assert F.tobytes() == F1.tobytes() and np.array_equal(Y, Y1)
    q.enqueue_batch(F2, Y2)
    F, Y = q.latest_batch(3)
    assert F.tobytes() == F2.tobytes()
    assert len(q) == 6
    with pytest.raises(ValueError):
        q.latest_batch(7)


def test_latest_batch_with_eviction_matches_reference():
    rng = np.random.default_rng(0)
    q, ref, nxt = ReplayQueue(20, 1), [], 0
    for _ in range(200):
        m = int(rng.integers(1, 8))
        ids = list(range(nxt, nxt + m))
        nxt += m
        q.enqueue_batch(*items(ids, 1))
        ref = (ref + ids)[-20:]
        n = int(rng.integers(1, len(ref) + 1))
        _, Y = q.latest_batch(n)
        assert Y[:, 0].tolist() == ref[-n:]


def test_full_pass_partition():
    q = ReplayQueue(256, 2)
    q.enqueue_batch(*items(range(256)))
    batches = q.full_pass_minibatches(32, np.random.default_rng(0))
    assert len(batches) == 8
    seen = np.concatenate([Y[:, 0] for _, Y in batches])
    assert sorted(seen.tolist()) == list(range(256))


def test_full_pass_floor():
    q = ReplayQueue(256, 2)
    q.enqueue_batch(*items(range(100)))
    batches = q.full_pass_minibatches(32, np.random.default_rng(0))
    assert len(batches) == 3
    seen = np.concatenate([Y[:, 0] for _, Y in batches])
    assert len(set(seen.tolist())) == 96


def test_full_pass_deterministic_and_read_only():
    q = ReplayQueue(64, 2)
    q.enqueue_batch(*items(range(50)))
    a = q.full_pass_minibatches(8, np.random.default_rng(3))
    b = q.full_pass_minibatches(8, np.random.default_rng(3))
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert contents(q) == list(range(50))
    with pytest.raises(ValueError):
        q.full_pass_minibatches(51, np.random.default_rng(0))


def test_stored_features_byte_identical():
    q = ReplayQueue(8, 5)
    F = np.random.default_rng(1).normal(size=(8, 5))
    q.enqueue_batch(F, np.zeros((8, 3), dtype=int))
    F[:] = 0  # caller mutating its buffer must not leak into the queue
    assert q.latest_batch(8)[0].tobytes() != F.tobytes()
    q2 = ReplayQueue(8, 5)
    G = np.random.default_rng(1).normal(size=(8, 5))
    q2.enqueue_batch(G, np.zeros((8, 3), dtype=int))
    assert q2.latest_batch(8)[0].tobytes() == G.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.lists(st.integers(1, 40), min_size=1, max_size=40))
def test_fifo_property(capacity, sizes):
    q, ref, nxt = ReplayQueue(capacity, 1), [], 0
    for m in sizes:
        m = min(m, capacity)
        ids = list(range(nxt, nxt + m))
        nxt += m
        q.enqueue_batch(*items(ids, 1))
        ref = (ref + ids)[-capacity:]
        assert len(q) <= capacity
        assert contents(q) == ref
