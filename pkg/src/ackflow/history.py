"""Sampled signal histories with past-time queries.

The whole simulator runs on :class:`Trajectory`: an append-only record of
(time, value) samples with linear interpolation, a constant pre-history,
a running integral and monotone-map inversion.  Delayed reads, in-transit
packet counts and backward (departure -> arrival) time queries are all
answered from here.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right

__all__ = ["Trajectory", "PacketCounter", "HistoryError", "CausalityError"]


class HistoryError(ValueError):
    """Bad trajectory usage: ordering, range or monotonicity violated."""


class CausalityError(HistoryError):
    """A query touched data the simulation has not produced yet."""


class Trajectory:
    """Time-indexed scalar signal, linearly interpolated between samples.

    Sample times must be strictly increasing.  For times before the first
    sample the signal is the constant ``initial_value``, so delayed reads
    at simulation start are well defined.  Reads beyond the newest sample
    raise :class:`CausalityError`: the engine must never consume values it
    has not produced yet.

    Concurrency: single writer appends; readers of strictly past data are
    safe.  Within one simulation, single-threaded use is the contract.
    """

    __slots__ = ("times", "values", "cumulative", "hold_cumulative",
                 "initial_value", "pruned_before")

    def __init__(self, initial_value: float = 0.0):
        self.times: list[float] = []
        self.values: list[float] = []
        # cumulative[i] = trapezoidal integral from times[0] to times[i];
        # hold_cumulative[i] = same with each value held to the next sample
        self.cumulative: list[float] = []
        self.hold_cumulative: list[float] = []
        self.initial_value = float(initial_value)
        # prune_before() moves this forward; queries older than it fail
        self.pruned_before: float | None = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def last_time(self) -> float:
        if not self.times:
            raise HistoryError("empty trajectory has no last time")
        return self.times[-1]

    @property
    def last_value(self) -> float:
        if not self.values:
            return self.initial_value
        return self.values[-1]

    def record(self, t: float, v: float) -> None:
        """Append a sample. ``t`` must exceed the last recorded time."""
        times = self.times
        if times:
            prev = times[-1]
            if t <= prev:
                raise HistoryError(
                    f"non-monotone record: t={t!r} after t={prev!r} "
                    "(engine ordering bug)")
            prev_v = self.values[-1]
            span = t - prev
            self.cumulative.append(self.cumulative[-1] + 0.5 * (prev_v + v) * span)
            self.hold_cumulative.append(self.hold_cumulative[-1] + prev_v * span)
        else:
            self.cumulative.append(0.0)
            self.hold_cumulative.append(0.0)
        times.append(t)
        self.values.append(v)

    def _check_not_pruned(self, t: float) -> None:
        if self.pruned_before is not None and t < self.pruned_before:
            raise HistoryError(
                f"read at t={t!r} precedes pruned history (< {self.pruned_before!r})")

    def eval_at(self, t: float) -> float:
        """Value at ``t``; exact on samples, interpolated between them."""
        times = self.times
        if not times:
            self._check_not_pruned(t)
            return self.initial_value
        if t > times[-1]:
            raise CausalityError(
                f"future read at t={t!r} (history ends at {times[-1]!r})")
        if t < times[0]:
            self._check_not_pruned(t)
            return self.initial_value
        i = bisect_right(times, t) - 1
        t0 = times[i]
        if t == t0 or i == len(times) - 1:
            return self.values[i]
        t1 = times[i + 1]
        v0, v1 = self.values[i], self.values[i + 1]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def _cumulative_at(self, t: float) -> float:
        """Integral from times[0] to t (negative/linear before history)."""
        times = self.times
        if t <= times[0]:
            return self.initial_value * (t - times[0])
        i = bisect_right(times, t) - 1
        if t == times[i]:
            return self.cumulative[i]
        # partial trapezoid inside cell i (value is linear there)
        va = self.values[i]
        vb = self.eval_at(t)
        return self.cumulative[i] + 0.5 * (va + vb) * (t - times[i])

    def integrate(self, t0: float, t1: float) -> float:
        """Trapezoidal integral over [t0, t1] on the sample grid."""
        if t1 < t0:
            raise HistoryError(f"reversed integration bounds [{t0!r}, {t1!r}]")
        if t0 == t1:
            return 0.0
        self._check_not_pruned(t0)
        if not self.times:
            return self.initial_value * (t1 - t0)
        if t1 > self.times[-1]:
            raise CausalityError(
                f"integration end t={t1!r} beyond history ({self.times[-1]!r})")
        return self._cumulative_at(t1) - self._cumulative_at(t0)

    def _hold_cumulative_at(self, t: float) -> float:
        times = self.times
        if t <= times[0]:
            return self.initial_value * (t - times[0])
        i = bisect_right(times, t) - 1
        return self.hold_cumulative[i] + self.values[i] * (t - times[i])

    def integrate_hold(self, t0: float, t1: float) -> float:
        """Integral reading each sample as held until the next one.

        Matches explicit left-point state stepping, so queue transport
        accounting based on it is exact; ``integrate`` (trapezoidal on the
        interpolated signal) remains the measurement-grade quadrature.
        """
        if t1 < t0:
            raise HistoryError(f"reversed integration bounds [{t0!r}, {t1!r}]")
        if t0 == t1:
            return 0.0
        self._check_not_pruned(t0)
        if not self.times:
            return self.initial_value * (t1 - t0)
        if t1 > self.times[-1]:
            raise CausalityError(
                f"integration end t={t1!r} beyond history ({self.times[-1]!r})")
        return self._hold_cumulative_at(t1) - self._hold_cumulative_at(t0)

    def invert_monotone(self, y: float) -> float:
        """Earliest time where a nondecreasing trajectory reaches ``y``.

        Where the map is flat, the left edge of the flat interval is
        returned (FIFO earliest-arrival tie-break).  ``y`` must lie inside
        the recorded value range.
        """
        values = self.values
        if not values:
            raise HistoryError("cannot invert an empty trajectory")
        if y < values[0] or y > values[-1]:
            raise HistoryError(
                f"inverse of {y!r} not determined: recorded range "
                f"[{values[0]!r}, {values[-1]!r}]")
        i = bisect_left(values, y)
        if values[i] == y:
            return self.times[i]
        v0, v1 = values[i - 1], values[i]
        if v1 <= v0:  # defensive; bisect_left guarantees v0 < y < v1
            raise HistoryError("trajectory is not nondecreasing around the target")
        t0, t1 = self.times[i - 1], self.times[i]
        return t0 + (t1 - t0) * (y - v0) / (v1 - v0)

    def prune_before(self, t: float) -> int:
        """Drop samples strictly older than the one bracketing ``t``.

        Keeps interpolation exact for all times >= t.  Queries older than
        the cut raise :class:`HistoryError`.  Returns the number of samples
        dropped.  Intended for bounding memory on very long runs; pruned
        spans disappear from exported traces.
        """
        times = self.times
        if not times or t <= times[0]:
            return 0
        keep_from = bisect_right(times, t) - 1
        if keep_from <= 0:
            return 0
        base = self.cumulative[keep_from]
        hold_base = self.hold_cumulative[keep_from]
        del self.times[:keep_from]
        del self.values[:keep_from]
        del self.cumulative[:keep_from]
        del self.hold_cumulative[:keep_from]
        self.cumulative[:] = [c - base for c in self.cumulative]
        self.hold_cumulative[:] = [c - hold_base for c in self.hold_cumulative]
        self.pruned_before = self.times[0]
        return keep_from


class PacketCounter:
    """Counts packets passing a node: the flow integral over [t0, t]."""

    __slots__ = ("flow",)

    def __init__(self, flow: Trajectory):
        self.flow = flow

    def count(self, t: float, t0: float) -> float:
        """Packets through the node between ``t0`` and ``t`` (t >= t0)."""
        if t < t0:
            raise HistoryError(f"packet count over reversed span [{t0!r}, {t!r}]")
        return self.flow.integrate(t0, t)
