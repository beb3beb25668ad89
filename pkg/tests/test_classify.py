"""Filter matching and the admit path."""

from __future__ import annotations

from htbsim.classify import Dropped, Enqueued, FlowFilter, admit, classify
from htbsim.core import build_tree
from htbsim.queues import LeafQueue, Packet

from helpers import leaf_cfg, root_cfg

MBPS = 10**6


def pkt(flow, seq=0):
    return Packet(flow_id=flow, size=1500, created_at=0, sequence=seq)


def test_direct_flow_map():
    filters = [FlowFilter(target_leaf=f"leaf{i}", flow_id=i) for i in range(5)]
    assert classify(filters, pkt(3)) == "leaf3"


def test_empty_filter_list_is_no_match():
    assert classify([], pkt(0)) is None


def test_first_match_wins_over_wildcard():
    filters = [FlowFilter(target_leaf="leafA", flow_id=0),
               FlowFilter(target_leaf="leafB")]
    assert classify(filters, pkt(0)) == "leafA"
    assert classify(filters, pkt(7)) == "leafB"


def test_label_filters():
    filters = [FlowFilter(target_leaf="leafA", src="hostA"),
               FlowFilter(target_leaf="leafB", dst="hostB")]

    class Meta:
        flow_id = 1
        src = "hostA"
        dst = None

    assert classify(filters, Meta()) == "leafA"
    Meta.src, Meta.dst = "other", "hostB"
    assert classify(filters, Meta()) == "leafB"
    Meta.dst = "elsewhere"
    assert classify(filters, Meta()) is None


def setup_admit(capacity=2):
    tree = build_tree([root_cfg(50 * MBPS),
                       leaf_cfg("leaf0", 3 * MBPS, 20 * MBPS, queue=0)],
                      50 * MBPS)
    queues = {"leaf0": LeafQueue("leaf0", capacity)}
    filters = [FlowFilter(target_leaf="leaf0", flow_id=0)]
    return tree, queues, filters


def test_admit_enqueues_and_activates():
    tree, queues, filters = setup_admit()
    outcome = admit(tree, queues, filters, pkt(0), now=0)
    assert outcome == Enqueued("leaf0")
    assert len(queues["leaf0"]) == 1
    assert tree.snapshot("leaf0").active
    assert tree.snapshot("leaf0").backlog == 1


def test_admit_full_queue_drops_without_notification():
    tree, queues, filters = setup_admit(capacity=1)
    admit(tree, queues, filters, pkt(0, 0), now=0)
    outcome = admit(tree, queues, filters, pkt(0, 1), now=0)
    assert outcome == Dropped("QueueFull")
    assert queues["leaf0"].drops == 1
    assert tree.snapshot("leaf0").backlog == 1   # occupancy mirror untouched


def test_admit_unmatched_packet_dropped():
    tree, queues, filters = setup_admit()
    outcome = admit(tree, queues, filters, pkt(42), now=0)
    assert outcome == Dropped("NoFilter")
    assert len(queues["leaf0"]) == 0
    assert not tree.snapshot("leaf0").active
