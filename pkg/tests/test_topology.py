import pytest

from ackflow.topology import (
    Circuit, Network, QueueSpec, RateFlowSpec, TopologyError, UserSpec,
    build_network, circuit_of,
)


def single_buffer_net():
    return build_network(
        queues=[QueueSpec("b", 100.0)],
        users=[UserSpec("u1", ("b",), (0.01,), 0.02)],
    )


def shared_buffer_net():
    return build_network(
        queues=[QueueSpec("b", 100.0)],
        users=[
            UserSpec("u1", ("b",), (0.001,), 0.002),
            UserSpec("u2", ("b",), (0.05,), 0.06),
        ],
    )


def series_net():
    # user 1 crosses both queues, users 2/3 one each
    return build_network(
        queues=[QueueSpec("b1", 100.0), QueueSpec("b2", 200.0)],
        users=[
            UserSpec("u1", ("b1", "b2"), (0.0, 0.02), 0.1),
            UserSpec("u2", ("b2",), (0.0,), 0.08),
            UserSpec("u3", ("b1",), (0.0,), 0.04),
        ],
    )


class TestBuild:
    def test_single_buffer_circuit_node_sequence(self):
        net = single_buffer_net()
        circ = circuit_of(net, "u1")
        assert circ.node_sequence == ("u1+", "b-", "b+", "u1-")

    def test_two_users_share_queue_edge(self):
        net = shared_buffer_net()
        c1, c2 = circuit_of(net, "u1"), circuit_of(net, "u2")
        q1 = [e for e in c1.edges if e.kind == "queue"]
        q2 = [e for e in c2.edges if e.kind == "queue"]
        assert q1 == q2
        assert net.flows_through("b") == ("u1", "u2")
        assert net.nodes["b-"].multiplicity == 2

    def test_series_circuit_traverses_queues_in_order(self):
        net = series_net()
        assert circuit_of(net, "u1").queue_ids == ("b1", "b2")
        assert circuit_of(net, "u3").queue_ids == ("b1",)
        assert circuit_of(net, "u1").forward_offsets_s == (0.0, 0.02)

    def test_unknown_user_rejected(self):
        with pytest.raises(TopologyError):
            circuit_of(single_buffer_net(), "nope")

    def test_dangling_queue_reference_named(self):
        with pytest.raises(TopologyError, match="ghost"):
            build_network(
                queues=[QueueSpec("b", 10.0)],
                users=[UserSpec("u1", ("ghost",), (0.01,), 0.01)],
            )

    def test_duplicate_ids_rejected(self):
        with pytest.raises(TopologyError, match="duplicate queue"):
            build_network([QueueSpec("b", 1.0), QueueSpec("b", 2.0)], [])
        with pytest.raises(TopologyError, match="duplicate flow"):
            build_network(
                [QueueSpec("b", 1.0)],
                [UserSpec("u", ("b",), (0.1,), 0.1), UserSpec("u", ("b",), (0.1,), 0.1)],
            )

    def test_same_buffer_twice_rejected(self):
        with pytest.raises(TopologyError, match="twice"):
            build_network(
                [QueueSpec("b", 1.0)],
                [UserSpec("u", ("b", "b"), (0.1, 0.1), 0.1)],
            )

    def test_zero_total_delay_rejected(self):
        with pytest.raises(TopologyError, match="zero total"):
            build_network(
                [QueueSpec("b", 1.0)],
                [UserSpec("u", ("b",), (0.0,), 0.0)],
            )

    def test_zero_delay_cycle_rejected(self):
        with pytest.raises(TopologyError, match="cycle"):
            build_network(
                [QueueSpec("a", 1.0), QueueSpec("b", 1.0)],
                [
                    UserSpec("u1", ("a", "b"), (0.0, 0.0), 0.1),
                    UserSpec("u2", ("b", "a"), (0.0, 0.0), 0.1),
                ],
            )

    def test_queue_order_respects_zero_delay_links(self):
        net = build_network(
            [QueueSpec("b2", 1.0), QueueSpec("b1", 1.0)],
            [UserSpec("u1", ("b1", "b2"), (0.0, 0.0), 0.1)],
        )
        assert net.queue_order.index("b1") < net.queue_order.index("b2")


class TestCircuitInvariants:
    @pytest.mark.parametrize("net_fn", [single_buffer_net, shared_buffer_net, series_net])
    def test_circuits_closed(self, net_fn):
        net = net_fn()
        for uid, circ in net.circuits.items():
            seq = circ.node_sequence
            assert seq[0] == f"{uid}+"
            assert seq[-1] == f"{uid}-"

    @pytest.mark.parametrize("net_fn", [single_buffer_net, shared_buffer_net, series_net])
    def test_total_delay_is_channel_sum(self, net_fn):
        net = net_fn()
        for circ in net.circuits.values():
            channel_sum = sum(e.delay_s for e in circ.edges if e.kind == "channel")
            assert channel_sum == pytest.approx(circ.total_delay_s)

    def test_min_positive_delay(self):
        assert series_net().min_positive_delay_s() == pytest.approx(0.02)
