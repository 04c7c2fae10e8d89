"""Window source: turns a congestion window into a sending flow.

While active, the source sends at the window's rate of change plus the
arriving acknowledgement rate (send-on-ACK).  When the window drops below
the flight size, the deficit lands in a nonpositive ACK buffer: arriving
acknowledgements are absorbed, sending stays at exactly zero, and traffic
resumes the instant the buffer refills to zero (located inside the step).
"""

from __future__ import annotations

from .history import Trajectory
from .topology import Circuit

__all__ = ["UserState", "sending_flow", "circuit_backward_time",
           "circuit_backward_rate", "ack_flow_identity_check"]

EPS_ACK_BUFFER_PKTS = 1e-9


def sending_flow(active: bool, wdot: float, ack_rate: float) -> float:
    """Send-on-ACK rate: window slope plus ACK rate while active, else 0."""
    if not active:
        return 0.0
    return wdot + ack_rate


class UserState:
    """Evolving state of one window-controlled source."""

    __slots__ = ("user_id", "window", "ack_buffer", "flight_balance",
                 "sending", "acks", "active")

    def __init__(self, user_id: str, window0_pkts: float, *,
                 sending0_pps: float = 0.0, flight0_pkts: float = 0.0):
        self.user_id = user_id
        self.window = float(window0_pkts)
        self.ack_buffer = 0.0          # nonpositive; packets to absorb
        self.flight_balance = float(flight0_pkts)
        self.sending = Trajectory(initial_value=sending0_pps)
        self.acks = Trajectory(initial_value=sending0_pps)
        self.active = True

    def apply_window_jump(self, delta_pkts: float) -> float:
        """Instantaneous window change; returns the packet burst to emit.

        A positive jump while sending is a burst of that many packets; any
        jump while retaining moves through the ACK buffer first, and only
        the part that refills it past zero comes out as a burst.
        """
        self.window += delta_pkts
        if self.ack_buffer >= -EPS_ACK_BUFFER_PKTS and delta_pkts >= 0:
            return delta_pkts
        nb = self.ack_buffer + delta_pkts
        if nb > 0:
            self.ack_buffer = 0.0
            return nb
        self.ack_buffer = nb
        return 0.0

    def step(self, wdot: float, burst_pkts: float, ack_rate: float,
             dt: float) -> float:
        """Advance window and ACK buffer by one step of length ``dt``.

        ``burst_pkts`` is an opening burst (from a positive window jump)
        spread over this step.  Returns the average sending rate over the
        step (what a rate sample at the step start should carry), locating
        the buffer-refill instant inside the step so packet counts stay
        exact.
        """
        burst_rate = burst_pkts / dt
        self.window += wdot * dt

        inflow = wdot + burst_rate + ack_rate
        if self.ack_buffer >= -EPS_ACK_BUFFER_PKTS:
            self.ack_buffer = 0.0
            if inflow >= 0.0:
                self.active = True
                send_avg = inflow
            else:
                # window falling faster than ACKs arrive: start retaining
                self.active = False
                self.ack_buffer = inflow * dt
                send_avg = 0.0
        else:
            nb = self.ack_buffer + inflow * dt
            if nb >= 0.0 and inflow > 0.0:
                # refills during this step: resume for the remaining fraction
                theta = -self.ack_buffer / inflow
                self.ack_buffer = 0.0
                self.active = True
                send_avg = inflow * (dt - theta) / dt
            else:
                self.ack_buffer = min(nb, 0.0)
                self.active = False
                send_avg = 0.0

        self.flight_balance += (send_avg - ack_rate) * dt
        return send_avg

    def flight_from_history(self, circuit_entry_time_s: float, t: float) -> float:
        """Flight size as the sending integral since the circuit entry time
        of the traffic being acknowledged now (the independent measurement,
        as opposed to the running ``flight_balance``)."""
        return self.sending.integrate(circuit_entry_time_s, t)


def circuit_backward_time(circuit: Circuit, queues: dict, t: float) -> float:
    """Entry time of the traffic leaving the circuit at ``t``.

    Walks the circuit backwards: undo the return channel, invert each
    queue's arrival->departure map, undo each hop channel.
    """
    x = t - circuit.return_delay_s
    for qid, hop in zip(reversed(circuit.queue_ids), reversed(circuit.hop_delays_s)):
        x = queues[qid].backward_time(x)
        x -= hop
    return x


def circuit_backward_rate(circuit: Circuit, queues: dict, t: float) -> float:
    """Slope of the circuit backward time map (channels contribute one)."""
    x = t - circuit.return_delay_s
    rate = 1.0
    for qid, hop in zip(reversed(circuit.queue_ids), reversed(circuit.hop_delays_s)):
        rate *= queues[qid].backward_rate(x)
        x = queues[qid].backward_time(x)
        x -= hop
    return rate


def ack_flow_identity_check(user: UserState, circuit: Circuit, queues: dict,
                            t: float) -> float:
    """Residual between the measured ACK rate and its structural value.

    The engine forms ACK flows by composing queue and channel outputs; the
    same rate must equal the sending flow read at the circuit backward time,
    scaled by the backward slope.  A large residual flags an inconsistency
    between the recorded histories and the delay operators.
    """
    measured = user.acks.eval_at(t)
    b = circuit_backward_time(circuit, queues, t)
    rate = circuit_backward_rate(circuit, queues, t)
    return abs(measured - rate * user.sending.eval_at(b))
