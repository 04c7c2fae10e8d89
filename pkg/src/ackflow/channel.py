"""Lossless constant-delay transmission channel.

A channel only shifts its input flow in time; the number of packets in
transit is the input integral over the trailing delay window.
"""

from __future__ import annotations

from .history import Trajectory

__all__ = ["channel_output", "channel_in_transit"]


def channel_output(inp: Trajectory, delay_s: float, t: float) -> float:
    """Output rate at ``t``: the input rate ``delay_s`` earlier, unchanged.

    ``delay_s == 0`` is the permitted degenerate channel (identity).
    """
    if delay_s < 0:
        raise ValueError("channel delay must be nonnegative")
    return inp.eval_at(t - delay_s)


def channel_in_transit(inp: Trajectory, delay_s: float, t: float) -> float:
    """Packets currently on the channel at ``t``."""
    if delay_s < 0:
        raise ValueError("channel delay must be nonnegative")
    return inp.integrate(t - delay_s, t)
