"""Scenario descriptions: topology, protocols, traffic and run settings.

One YAML document describes a run.  Keys carry explicit units
(``capacity_mbps``, ``hop_delays_ms``) and everything is normalized to
packets and seconds on load; capacities given in Mb/s are converted with
the scenario's packet size (bits per second divided by 8 * packet bytes).
Serialization emits the canonical normalized form, which parses back to an
identical scenario.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import yaml

from .topology import Network, QueueSpec, RateFlowSpec, UserSpec, build_network

__all__ = [
    "Scenario", "QueueConf", "UserConf", "RateFlowConf", "RunConf",
    "ScheduledProtocol", "FastProtocol", "ConstantProfile", "SquareProfile",
    "ScenarioError", "parse_scenario", "serialize_scenario", "load_scenario",
    "preset", "preset_names", "mbps_to_pps", "to_network",
]


class ScenarioError(ValueError):
    """Malformed scenario; the message names the offending field."""


def mbps_to_pps(mbps: float, packet_bytes: int) -> float:
    return mbps * 1e6 / (8.0 * packet_bytes)


@dataclass(frozen=True)
class QueueConf:
    id: str
    capacity_pps: float


@dataclass(frozen=True)
class ScheduledProtocol:
    initial_window_pkts: float
    steps: tuple[tuple[float, float], ...] = ()  # (time_s, window_pkts)
    kind: str = "scheduled"


@dataclass(frozen=True)
class FastProtocol:
    gamma: float
    alpha_pkts: float
    initial_window_pkts: float
    kind: str = "fast"


@dataclass(frozen=True)
class UserConf:
    id: str
    queue_path: tuple[str, ...]
    hop_delays_s: tuple[float, ...]
    return_delay_s: float
    protocol: ScheduledProtocol | FastProtocol

    @property
    def total_delay_s(self) -> float:
        return sum(self.hop_delays_s) + self.return_delay_s


@dataclass(frozen=True)
class ConstantProfile:
    rate_pps: float
    kind: str = "constant"

    def rate_at(self, t: float) -> float:
        return self.rate_pps

    def next_change_after(self, t: float) -> float:
        return float("inf")


@dataclass(frozen=True)
class SquareProfile:
    """Square wave alternating between two rates, half a period each."""

    high_pps: float
    low_pps: float
    period_s: float
    start_high: bool = True
    kind: str = "square"

    def rate_at(self, t: float) -> float:
        phase = (t % self.period_s) / self.period_s
        in_first_half = phase < 0.5
        if in_first_half == self.start_high:
            return self.high_pps
        return self.low_pps

    def next_change_after(self, t: float) -> float:
        half = self.period_s / 2.0
        nxt = (math.floor(t / half) + 1) * half
        while nxt <= t + 1e-15:
            nxt += half
        return nxt


@dataclass(frozen=True)
class RateFlowConf:
    id: str
    queue_path: tuple[str, ...]
    hop_delays_s: tuple[float, ...]
    profile: ConstantProfile | SquareProfile


@dataclass(frozen=True)
class RunConf:
    dt_s: float = 1e-4
    horizon_s: float = 10.0
    init: str = "cold"  # "cold" | "equilibrium"


@dataclass(frozen=True)
class Scenario:
    name: str
    packet_bytes: int
    queues: tuple[QueueConf, ...]
    users: tuple[UserConf, ...] = ()
    rate_flows: tuple[RateFlowConf, ...] = ()
    run: RunConf = field(default_factory=RunConf)

    def queue(self, qid: str) -> QueueConf:
        for q in self.queues:
            if q.id == qid:
                return q
        raise ScenarioError(f"unknown queue '{qid}'")


def to_network(scenario: Scenario) -> Network:
    return build_network(
        queues=[QueueSpec(q.id, q.capacity_pps) for q in scenario.queues],
        users=[UserSpec(u.id, u.queue_path, u.hop_delays_s, u.return_delay_s)
               for u in scenario.users],
        rate_flows=[RateFlowSpec(f.id, f.queue_path, f.hop_delays_s)
                    for f in scenario.rate_flows],
    )


# ---------------------------------------------------------------------------
# parsing

def _err(path: str, msg: str) -> ScenarioError:
    return ScenarioError(f"{path}: {msg}")


def _take(d: dict, path: str, key: str, required=True, default=None):
    if key in d:
        return d.pop(key)
    if required:
        raise _err(path, f"missing required key '{key}'")
    return default


def _no_leftovers(d: dict, path: str):
    if d:
        raise _err(path, f"unknown key(s) {sorted(d)}")


def _number(x, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise _err(path, f"expected a number, got {x!r}")
    return float(x)


def _rate_pps(d: dict, path: str, prefix: str, packet_bytes: int,
              capacity_lookup) -> float:
    """Resolve one rate given as _pps, _mbps, or a capacity fraction."""
    keys = [k for k in (f"{prefix}_pps", f"{prefix}_mbps", f"{prefix}_fraction")
            if k in d]
    if len(keys) != 1:
        raise _err(path, f"give exactly one of {prefix}_pps / {prefix}_mbps / "
                         f"{prefix}_fraction (got {keys or 'none'})")
    key = keys[0]
    val = _number(d.pop(key), f"{path}.{key}")
    if key.endswith("_pps"):
        return val
    if key.endswith("_mbps"):
        return mbps_to_pps(val, packet_bytes)
    if not 0.0 <= val < 1.0:
        raise _err(path, f"{key} must lie in [0, 1)")
    return val * capacity_lookup()


def _parse_protocol(d, path: str):
    if not isinstance(d, dict):
        raise _err(path, "protocol must be a mapping")
    d = dict(d)
    kind = _take(d, path, "kind")
    if kind == "scheduled":
        w0 = _number(_take(d, path, "initial_window_pkts"), f"{path}.initial_window_pkts")
        raw_steps = _take(d, path, "steps", required=False, default=[])
        steps = []
        for i, s in enumerate(raw_steps):
            sp = f"{path}.steps[{i}]"
            s = dict(s)
            at = _number(_take(s, sp, "at_s"), f"{sp}.at_s")
            w = _number(_take(s, sp, "window_pkts"), f"{sp}.window_pkts")
            _no_leftovers(s, sp)
            steps.append((at, w))
        _no_leftovers(d, path)
        return ScheduledProtocol(w0, tuple(steps))
    if kind == "fast":
        gamma = _number(_take(d, path, "gamma"), f"{path}.gamma")
        alpha = _number(_take(d, path, "alpha_pkts"), f"{path}.alpha_pkts")
        w0 = _number(_take(d, path, "initial_window_pkts"), f"{path}.initial_window_pkts")
        _no_leftovers(d, path)
        return FastProtocol(gamma, alpha, w0)
    raise _err(path, f"unknown protocol kind '{kind}'")


def _delays_s(d: dict, path: str, prefix: str, n_expected=None):
    """One of <prefix>_s / <prefix>_ms, scalar or list, in seconds."""
    keys = [k for k in (f"{prefix}_s", f"{prefix}_ms") if k in d]
    if len(keys) != 1:
        raise _err(path, f"give exactly one of {prefix}_s / {prefix}_ms")
    key = keys[0]
    scale = 1.0 if key.endswith("_s") else 1e-3
    raw = d.pop(key)
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return _number(raw, f"{path}.{key}") * scale
    if not isinstance(raw, list):
        raise _err(path, f"{key} must be a number or list")
    vals = tuple(_number(x, f"{path}.{key}[{i}]") * scale for i, x in enumerate(raw))
    if n_expected is not None and len(vals) != n_expected:
        raise _err(path, f"{key} must have {n_expected} entries (one per queue)")
    return vals


def parse_scenario(text: str) -> Scenario:
    """Parse and validate one YAML scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"invalid YAML: {e}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario file must contain a YAML mapping")
    doc = dict(doc)

    name = _take(doc, "scenario", "name")
    packet_bytes = _take(doc, "scenario", "packet_bytes")
    if not isinstance(packet_bytes, int) or packet_bytes <= 0:
        raise _err("packet_bytes", "must be a positive integer")

    queues = []
    qcaps: dict[str, float] = {}
    for i, q in enumerate(_take(doc, "scenario", "queues")):
        path = f"queues[{i}]"
        q = dict(q)
        qid = _take(q, path, "id")
        cap = _rate_pps(q, path, "capacity", packet_bytes, lambda: 0.0)
        if cap <= 0:
            raise _err(path, "capacity must be positive")
        _no_leftovers(q, path)
        if qid in qcaps:
            raise _err(path, f"duplicate queue id '{qid}'")
        qcaps[qid] = cap
        queues.append(QueueConf(qid, cap))

    def check_path(raw, path):
        if not isinstance(raw, list) or not raw:
            raise _err(path, "path must be a non-empty list of queue ids")
        for qid in raw:
            if qid not in qcaps:
                raise _err(path, f"references unknown queue '{qid}'")
        return tuple(raw)

    users = []
    for i, u in enumerate(_take(doc, "scenario", "users", required=False, default=[])):
        path = f"users[{i}]"
        u = dict(u)
        uid = _take(u, path, "id")
        qpath = check_path(_take(u, path, "path"), f"{path}.path")
        hops = _delays_s(u, path, "hop_delays", n_expected=len(qpath))
        if isinstance(hops, float):
            hops = (hops,)
        ret = _delays_s(u, path, "return_delay")
        proto = _parse_protocol(_take(u, path, "protocol"), f"{path}.protocol")
        _no_leftovers(u, path)
        users.append(UserConf(uid, qpath, hops, ret, proto))

    flows = []
    for i, f in enumerate(_take(doc, "scenario", "rate_flows", required=False, default=[])):
        path = f"rate_flows[{i}]"
        f = dict(f)
        fid = _take(f, path, "id")
        qpath = check_path(_take(f, path, "path"), f"{path}.path")
        hops = _delays_s(f, path, "hop_delays", n_expected=len(qpath))
        if isinstance(hops, float):
            hops = (hops,)
        praw = dict(_take(f, path, "profile"))
        ppath = f"{path}.profile"
        pkind = _take(praw, ppath, "kind")
        cap_of_first = lambda qp=qpath: qcaps[qp[0]]
        if pkind == "constant":
            rate = _rate_pps(praw, ppath, "rate", packet_bytes, cap_of_first)
            profile = ConstantProfile(rate)
        elif pkind == "square":
            high = _rate_pps(praw, ppath, "high", packet_bytes, cap_of_first)
            low = _rate_pps(praw, ppath, "low", packet_bytes, cap_of_first)
            period = _number(_take(praw, ppath, "period_s"), f"{ppath}.period_s")
            start_high = _take(praw, ppath, "start_high", required=False, default=True)
            if period <= 0:
                raise _err(ppath, "period_s must be positive")
            profile = SquareProfile(high, low, period, bool(start_high))
        else:
            raise _err(ppath, f"unknown profile kind '{pkind}'")
        _no_leftovers(praw, ppath)
        _no_leftovers(f, path)
        flows.append(RateFlowConf(fid, qpath, hops, profile))

    # cross_traffic is sugar for a constant rate flow into one queue
    for i, x in enumerate(_take(doc, "scenario", "cross_traffic", required=False, default=[])):
        path = f"cross_traffic[{i}]"
        x = dict(x)
        qid = _take(x, path, "queue")
        if qid not in qcaps:
            raise _err(path, f"references unknown queue '{qid}'")
        frac = _number(_take(x, path, "fraction"), f"{path}.fraction")
        if not 0.0 <= frac < 1.0:
            raise _err(path, "fraction must lie in [0, 1)")
        _no_leftovers(x, path)
        flows.append(RateFlowConf(
            f"cross_{qid}", (qid,), (0.0,), ConstantProfile(frac * qcaps[qid])))

    run_raw = dict(_take(doc, "scenario", "run", required=False, default={}))
    dt = _number(_take(run_raw, "run", "dt_s", required=False, default=1e-4), "run.dt_s")
    horizon = _number(_take(run_raw, "run", "horizon_s", required=False, default=10.0),
                      "run.horizon_s")
    init = _take(run_raw, "run", "init", required=False, default="cold")
    if init not in ("cold", "equilibrium"):
        raise _err("run.init", f"must be 'cold' or 'equilibrium', got {init!r}")
    if dt <= 0 or horizon <= 0:
        raise _err("run", "dt_s and horizon_s must be positive")
    _no_leftovers(run_raw, "run")

    _no_leftovers(doc, "scenario")
    scenario = Scenario(name, packet_bytes, tuple(queues), tuple(users),
                        tuple(flows), RunConf(dt, horizon, init))
    to_network(scenario)  # surface topology errors at parse time
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical YAML form; parsing it back yields an identical scenario."""
    doc = {
        "name": scenario.name,
        "packet_bytes": scenario.packet_bytes,
        "queues": [{"id": q.id, "capacity_pps": q.capacity_pps}
                   for q in scenario.queues],
        "users": [],
        "rate_flows": [],
        "run": {"dt_s": scenario.run.dt_s, "horizon_s": scenario.run.horizon_s,
                "init": scenario.run.init},
    }
    for u in scenario.users:
        if isinstance(u.protocol, ScheduledProtocol):
            proto = {"kind": "scheduled",
                     "initial_window_pkts": u.protocol.initial_window_pkts,
                     "steps": [{"at_s": t, "window_pkts": w}
                               for t, w in u.protocol.steps]}
        else:
            proto = {"kind": "fast", "gamma": u.protocol.gamma,
                     "alpha_pkts": u.protocol.alpha_pkts,
                     "initial_window_pkts": u.protocol.initial_window_pkts}
        doc["users"].append({
            "id": u.id, "path": list(u.queue_path),
            "hop_delays_s": list(u.hop_delays_s),
            "return_delay_s": u.return_delay_s, "protocol": proto,
        })
    for f in scenario.rate_flows:
        if isinstance(f.profile, ConstantProfile):
            profile = {"kind": "constant", "rate_pps": f.profile.rate_pps}
        else:
            profile = {"kind": "square", "high_pps": f.profile.high_pps,
                       "low_pps": f.profile.low_pps,
                       "period_s": f.profile.period_s,
                       "start_high": f.profile.start_high}
        doc["rate_flows"].append({
            "id": f.id, "path": list(f.queue_path),
            "hop_delays_s": list(f.hop_delays_s), "profile": profile,
        })
    return yaml.safe_dump(doc, sort_keys=False)


def scenario_digest(scenario: Scenario) -> str:
    """Stable content hash used to freeze the preset library."""
    blob = json.dumps(asdict(scenario), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_scenario(name_or_path: str) -> Scenario:
    """Resolve a preset name or read a scenario file."""
    if name_or_path in _PRESETS:
        return _PRESETS[name_or_path]()
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            return parse_scenario(fh.read())
    except FileNotFoundError:
        raise ScenarioError(
            f"'{name_or_path}' is neither a preset ({', '.join(preset_names())}) "
            "nor a readable file") from None


# ---------------------------------------------------------------------------
# preset library
#
# Two users over one 100 Mb/s bottleneck (1590 B packets), two-queue chains
# at 72/180 Mb/s (1448 B), single-user halving runs (1040 B), a square-wave
# flow-separation demo, a two-user FAST run and a homogeneous pair for the
# reduced static-link check.  Parameter values are frozen and covered by a
# digest test.

def _sched(w0, *steps):
    return ScheduledProtocol(float(w0), tuple((float(t), float(w)) for t, w in steps))


def _one_bottleneck(name, w1, steps1, w2, t1_ms, t2_ms, horizon):
    cap = mbps_to_pps(100.0, 1590)
    return Scenario(
        name=name, packet_bytes=1590,
        queues=(QueueConf("b1", cap),),
        users=(
            UserConf("u1", ("b1",), (t1_ms / 2 * 1e-3,), t1_ms / 2 * 1e-3,
                     _sched(w1, *steps1)),
            UserConf("u2", ("b1",), (t2_ms / 2 * 1e-3,), t2_ms / 2 * 1e-3,
                     _sched(w2)),
        ),
        run=RunConf(1e-4, horizon, "equilibrium"),
    )


def _scenario1():
    return _one_bottleneck("scenario1", 50, [(3.0, 150)], 550, 3.2, 117.0, 8.0)


def _scenario2():
    return _one_bottleneck("scenario2", 210, [(5.0, 300)], 750, 10.0, 90.0, 10.0)


def _two_queue_chain(name, w1, w2, w3, step_user, cross, horizon=16.0):
    # chain: user 1 crosses both queues (20 ms between them), user 3 the
    # first only, user 2 the second only; round trips 120/80/40 ms
    c1 = mbps_to_pps(72.0, 1448)
    c2 = mbps_to_pps(180.0, 1448)
    step = [(10.0, {"u1": w1, "u2": w2, "u3": w3}[step_user] + 200)]
    protos = {
        "u1": _sched(w1, *(step if step_user == "u1" else [])),
        "u2": _sched(w2, *(step if step_user == "u2" else [])),
        "u3": _sched(w3, *(step if step_user == "u3" else [])),
    }
    flows = ()
    if cross:
        flows = (RateFlowConf("cross_b1", ("b1",), (0.0,),
                              ConstantProfile(0.5 * c1)),)
    return Scenario(
        name=name, packet_bytes=1448,
        queues=(QueueConf("b1", c1), QueueConf("b2", c2)),
        users=(
            UserConf("u1", ("b1", "b2"), (0.0, 0.020), 0.100, protos["u1"]),
            UserConf("u2", ("b2",), (0.0,), 0.080, protos["u2"]),
            UserConf("u3", ("b1",), (0.0,), 0.040, protos["u3"]),
        ),
        rate_flows=flows,
        run=RunConf(1e-4, horizon, "equilibrium"),
    )


def _scenario3():
    return _two_queue_chain("scenario3", 1600, 1200, 5, "u1", cross=False)


def _scenario4():
    return _two_queue_chain("scenario4", 1600, 1200, 5, "u2", cross=False)


def _scenario5():
    return _two_queue_chain("scenario5", 1200, 1600, 5, "u1", cross=True)


def _scenario6():
    return _two_queue_chain("scenario6", 1200, 1600, 5, "u2", cross=True)


def _halving(name, cap_mbps, cross_fraction):
    cap = mbps_to_pps(cap_mbps, 1040)
    flows = ()
    if cross_fraction:
        flows = (RateFlowConf("cross_b1", ("b1",), (0.0,),
                              ConstantProfile(cross_fraction * cap)),)
    return Scenario(
        name=name, packet_bytes=1040,
        queues=(QueueConf("b1", cap),),
        users=(UserConf("u1", ("b1",), (0.075,), 0.075,
                        _sched(500, (5.0, 250))),),
        rate_flows=flows,
        run=RunConf(1e-4, 10.0, "equilibrium"),
    )


def _scenario7():
    return _halving("scenario7", 12.5, 0.0)


def _scenario8():
    return _halving("scenario8", 25.0, 0.5)


def _squarewave():
    # two square flows in phase opposition at 0.55 c each: constant total
    # 1.1 c, alternating composition; exercises the per-flow output split
    cap = mbps_to_pps(100.0, 1590)
    rate = 1.1 * cap
    return Scenario(
        name="squarewave", packet_bytes=1590,
        queues=(QueueConf("b1", cap),),
        rate_flows=(
            RateFlowConf("f1", ("b1",), (0.0,),
                         SquareProfile(rate, 0.0, 1.0, start_high=True)),
            RateFlowConf("f2", ("b1",), (0.0,),
                         SquareProfile(rate, 0.0, 1.0, start_high=False)),
        ),
        run=RunConf(1e-4, 11.0, "cold"),
    )


def _fast2():
    cap = mbps_to_pps(100.0, 1590)
    proto = FastProtocol(gamma=0.5, alpha_pkts=200.0, initial_window_pkts=100.0)
    return Scenario(
        name="fast2", packet_bytes=1590,
        queues=(QueueConf("b1", cap),),
        users=(
            UserConf("u1", ("b1",), (0.050,), 0.050, proto),
            UserConf("u2", ("b1",), (0.050,), 0.050, proto),
        ),
        run=RunConf(1e-4, 20.0, "cold"),
    )


def _staticlink():
    # homogeneous delays, no cross traffic, permanently congested, no
    # retaining: the reduced window-sum model must hold to a couple packets
    cap = mbps_to_pps(100.0, 1590)
    return Scenario(
        name="staticlink", packet_bytes=1590,
        queues=(QueueConf("b1", cap),),
        users=(
            UserConf("u1", ("b1",), (0.020,), 0.080, _sched(500, (3.0, 700))),
            UserConf("u2", ("b1",), (0.020,), 0.080, _sched(600)),
        ),
        run=RunConf(1e-4, 8.0, "equilibrium"),
    )


_PRESETS = {
    "scenario1": _scenario1,
    "scenario2": _scenario2,
    "scenario3": _scenario3,
    "scenario4": _scenario4,
    "scenario5": _scenario5,
    "scenario6": _scenario6,
    "scenario7": _scenario7,
    "scenario8": _scenario8,
    "squarewave": _squarewave,
    "fast2": _fast2,
    "staticlink": _staticlink,
}


def preset(name: str) -> Scenario:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ScenarioError(f"unknown preset '{name}'") from None


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)
