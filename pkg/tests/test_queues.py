"""FIFO queue behaviour and conservation accounting."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htbsim.queues import LeafQueue, Packet


def pkt(seq, flow=0, size=1500):
    return Packet(flow_id=flow, size=size, created_at=seq * 1000, sequence=seq)


def test_push_into_empty_queue():
    q = LeafQueue("leaf0", capacity=500)
    assert q.push(pkt(0))
    assert len(q) == 1


def test_push_full_queue_drops():
    q = LeafQueue("leaf0", capacity=2)
    assert q.push(pkt(0)) and q.push(pkt(1))
    assert not q.push(pkt(2))
    assert q.drops == 1
    assert len(q) == 2
    assert q.head().sequence == 0


def test_fifo_order():
    q = LeafQueue("leaf0", capacity=10)
    for i in range(3):
        q.push(pkt(i))
    assert [q.pop().sequence for _ in range(3)] == [0, 1, 2]


def test_pop_empty_is_a_bug():
    q = LeafQueue("leaf0", capacity=1)
    with pytest.raises(IndexError):
        q.pop()


def test_pop_to_empty():
    q = LeafQueue("leaf0", capacity=1)
    q.push(pkt(0))
    assert q.pop().sequence == 0
    assert len(q) == 0


def test_capacity_must_be_positive():
    with pytest.raises(ValueError):
        LeafQueue("leaf0", capacity=0)


@given(ops=st.lists(st.integers(0, 3), min_size=1, max_size=200))
@settings(max_examples=60, deadline=None)
def test_matches_reference_fifo_model(ops):
    # op 0..2: push, op 3: pop when possible; compare against a plain list
    q = LeafQueue("leaf0", capacity=5)
    model: list[int] = []
    seq = 0
    for op in ops:
        if op < 3:
            accepted = q.push(pkt(seq))
            assert accepted == (len(model) < 5)
            if accepted:
                model.append(seq)
            seq += 1
        elif model:
            assert q.pop().sequence == model.pop(0)
    assert [p.sequence for p in q.packets] == model
    assert q.offered == q.pops + q.drops + len(q)
