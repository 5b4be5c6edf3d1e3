"""Scenario files: YAML documents with 1-based robot labels.

A minimal file::

    version: 1
    robots: 3
    leader: 3
    edges: [[1, 2], [2, 3]]          # observer, observed
    initial_states: [[x, y, theta_deg], ...]
    horizon: 10
    dt: 0.01

See ``data/paper_6robot.scn`` for every supported key.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..adaptive_controller import Team, edge_terms
from ..digraph import Topology, has_spanning_tree
from ..fov_potentials import FovTriangle, TopologyViolation, rotation, wrap_angle
from ..resilience import FaultProfile, Signal, ZERO

SCHEMA_VERSION = 1
MODES = ("nominal", "adaptive", "resilient", "qlearning")


class ScenarioError(ValueError):
    """Parse or validation failure; ``where`` names the offending field."""

    def __init__(self, message, where=None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass(frozen=True)
class Segment:
    """Constant leader velocity on ``[start, stop)``."""

    start: float
    stop: float
    velocity: tuple


@dataclass
class Learning:
    discount: float = 0.9
    t_in: int = 50
    forgetting: float = 0.99
    eps0: float = 0.7
    eps1: float = 11.0
    p0: float = 100.0
    normalize: bool = True
    floor: float = 1e-2


@dataclass
class Scenario:
    n: int
    leader: int  # 0-based
    topology: Topology
    initial_states: np.ndarray
    fov: FovTriangle
    segments: tuple = ()
    mode: str = "adaptive"
    faults: FaultProfile | None = None
    gamma: float = 10.0
    learning: Learning = field(default_factory=Learning)
    horizon: float = 10.0
    dt: float = 0.01
    integrator: str = "rk4"
    initial_gains: np.ndarray | None = None
    seed: int = 0
    out_dir: str = "out"
    csv_stride: int = 1
    name: str = ""
    content_hash: str = ""

    def team(self) -> Team:
        return Team(self.topology, self.fov)

    def gains0(self) -> np.ndarray:
        if self.initial_gains is None:
            return np.ones(self.topology.num_edges)
        return np.asarray(self.initial_gains, dtype=float).copy()

    def exogenous(self, t: float) -> np.ndarray:
        """Additive (n, 3) velocity; only the leader's planar channel is driven."""
        out = np.zeros((self.n, 3))
        for seg in self.segments:
            if seg.start <= t < seg.stop:
                out[self.leader, :2] += seg.velocity
        return out

    def actuation_changes(self) -> list[float]:
        """Times at which the leader input switches, within the horizon."""
        times = set()
        for seg in self.segments:
            times.update((seg.start, seg.stop))
        return sorted(t for t in times if 0 <= t < self.horizon)

    def label(self, i: int) -> int:
        return i + 1


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _num(d, key, where, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise ScenarioError("missing required field", f"{where}{key}")
        return default
    v = d[key]
    try:
        v = int(v) if integer else float(v)
    except (TypeError, ValueError):
        raise ScenarioError(f"expected a number, got {d[key]!r}", f"{where}{key}") from None
    if integer and float(d[key]) != v:
        raise ScenarioError(f"expected an integer, got {d[key]!r}", f"{where}{key}")
    if not math.isfinite(v):
        raise ScenarioError("must be finite", f"{where}{key}")
    if positive and v <= 0:
        raise ScenarioError(f"must be positive, got {v}", f"{where}{key}")
    return v


def _robot(label, n, where) -> int:
    try:
        i = int(label)
    except (TypeError, ValueError):
        raise ScenarioError(f"robot label {label!r} is not an integer", where) from None
    if not 1 <= i <= n:
        raise ScenarioError(f"robot label {i} outside 1..{n}", where)
    return i - 1


def _vec(v, size, where):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"expected {size} numbers", where) from None
    if a.shape != (size,) or not np.all(np.isfinite(a)):
        raise ScenarioError(f"expected {size} finite numbers, got {v!r}", where)
    return a


def _signal(cfg, where) -> Signal:
    if cfg in (None, "zero", 0):
        return ZERO
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ScenarioError("fault must be 'zero' or one of {ramp: r}, {sine: [amp, freq]}, {constant: v}", where)
    (kind, val), = cfg.items()
    if kind == "ramp" or kind == "constant":
        params = (val,)
    elif kind == "sine":
        if not isinstance(val, (list, tuple)) or len(val) != 2:
            raise ScenarioError("sine takes [amplitude, frequency_hz]", where)
        params = tuple(val)
    else:
        raise ScenarioError(f"unknown fault kind {kind!r}", where)
    try:
        return Signal(kind, params)
    except ValueError as exc:
        raise ScenarioError(str(exc), where) from None


def _faults(cfg, n) -> FaultProfile | None:
    if not cfg:
        return None
    sensor = [ZERO] * n
    actuator = [ZERO] * n
    for group, target in (("sensor", sensor), ("actuator", actuator)):
        entries = cfg.get(group) or {}
        if not isinstance(entries, dict):
            raise ScenarioError("expected a mapping of robot label (or 'all') to fault", f"faults.{group}")
        for key, val in entries.items():
            where = f"faults.{group}.{key}"
            sig = _signal(val, where)
            if key == "all":
                target[:] = [sig] * n
            else:
                target[_robot(key, n, where)] = sig
    return FaultProfile(tuple(sensor), tuple(actuator))


def _segments(cfg, where="leader_input"):
    if cfg is None:
        return ()
    if not isinstance(cfg, list):
        raise ScenarioError("expected a list of segments", where)
    out = []
    for k, seg in enumerate(cfg):
        w = f"{where}[{k}]."
        if not isinstance(seg, dict):
            raise ScenarioError("expected a mapping", f"{where}[{k}]")
        start = _num(seg, "start", w)
        stop = _num(seg, "stop", w)
        if stop <= start:
            raise ScenarioError("stop must exceed start", f"{w}stop")
        if "velocity" in seg:
            vel = _vec(seg["velocity"], 2, f"{w}velocity")
        else:
            speed = _num(seg, "speed", w)
            ang = math.radians(_num(seg, "heading_deg", w))
            vel = speed * np.array([math.cos(ang), math.sin(ang)])
        out.append(Segment(start, stop, tuple(float(v) for v in vel)))
    return tuple(out)


def _fov(cfg) -> FovTriangle:
    cfg = cfg or {}
    kw = {}
    if "half_angle_deg" in cfg:
        kw["half_angle"] = math.radians(_num(cfg, "half_angle_deg", "fov."))
    for key in ("depth", "apex_offset", "amplitude"):
        if key in cfg:
            kw[key] = _num(cfg, key, "fov.")
    for key in ("quality_mean", "quality_sigma"):
        if key in cfg:
            kw[key] = tuple(_vec(cfg[key], 2, f"fov.{key}"))
    try:
        return FovTriangle(**kw)
    except ValueError as exc:
        raise ScenarioError(str(exc), "fov") from None


def formation_states(topology: Topology, leader: int, fov: FovTriangle, leader_pose, headings) -> np.ndarray:
    """Place every follower so that its first out-neighbor sits at its quality mean."""
    n = topology.n
    s = np.full((n, 3), np.nan)
    s[leader] = leader_pose
    placed = {leader}
    while len(placed) < n:
        progress = False
        for i in range(n):
            if i in placed:
                continue
            outs = topology.out_neighbors(i)
            parent = next((j for j in outs if j in placed), None)
            if parent is None:
                continue
            th = headings[i]
            s[i, 2] = th
            s[i, :2] = s[parent, :2] - rotation(th) @ np.asarray(fov.quality_mean)
            placed.add(i)
            progress = True
        if not progress:
            missing = sorted(set(range(n)) - placed)
            raise ScenarioError(f"robots {[m + 1 for m in missing]} do not observe anyone placed", "formation")
    return s


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError(f"parse error at {loc}: {getattr(exc, 'problem', exc)}", source) from None
    if not isinstance(doc, dict):
        raise ScenarioError("top level must be a mapping", source)
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported version {version!r} (expected {SCHEMA_VERSION})", "version")

    n = _num(doc, "robots", "", integer=True, positive=True)
    leader = _robot(doc.get("leader"), n, "leader")
    raw_edges = doc.get("edges")
    if not isinstance(raw_edges, list):
        raise ScenarioError("expected a list of [observer, observed] pairs", "edges")
    edges = []
    for k, e in enumerate(raw_edges):
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise ScenarioError("expected [observer, observed]", f"edges[{k}]")
        edges.append((_robot(e[0], n, f"edges[{k}]"), _robot(e[1], n, f"edges[{k}]")))
    try:
        topology = Topology(n, edges)
    except ValueError as exc:
        raise ScenarioError(str(exc), "edges") from None
    if not has_spanning_tree(topology, leader):
        raise ScenarioError(f"not every robot reaches leader {leader + 1} along observation edges", "edges")

    fov = _fov(doc.get("fov"))

    if "initial_states" in doc and "formation" in doc:
        raise ScenarioError("give either initial_states or formation, not both", "initial_states")
    if "initial_states" in doc:
        rows = doc["initial_states"]
        if not isinstance(rows, list) or len(rows) != n:
            raise ScenarioError(f"expected {n} rows of [x, y, theta_deg]", "initial_states")
        s0 = np.array([_vec(r, 3, f"initial_states[{k}]") for k, r in enumerate(rows)])
        s0[:, 2] = np.radians(s0[:, 2])
    elif "formation" in doc:
        fm = doc["formation"] or {}
        pose = _vec(fm.get("leader_pose", [0, 0, 0]), 3, "formation.leader_pose")
        pose[2] = math.radians(pose[2])
        heads = fm.get("headings_deg") or {}
        if not isinstance(heads, dict):
            raise ScenarioError("expected a mapping of robot label to heading", "formation.headings_deg")
        th = np.zeros(n)
        for key, val in heads.items():
            th[_robot(key, n, f"formation.headings_deg.{key}")] = math.radians(float(val))
        s0 = formation_states(topology, leader, fov, pose, th)
    else:
        raise ScenarioError("missing initial_states or formation", "initial_states")

    horizon = _num(doc, "horizon", "", positive=True)
    dt = _num(doc, "dt", "", default=1e-3, positive=True)
    if dt > horizon:
        raise ScenarioError("dt exceeds the horizon", "dt")
    seed = _num(doc, "seed", "", default=0, integer=True)
    jitter = _num(doc, "initial_jitter", "", default=0.0)
    if jitter < 0:
        raise ScenarioError("must be non-negative", "initial_jitter")
    if jitter > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(scale=jitter, size=(n, 2))
        noise[leader] = 0.0
        s0[:, :2] += noise
    s0[:, 2] = wrap_angle(s0[:, 2])

    mode = doc.get("mode", "adaptive")
    if mode not in MODES:
        raise ScenarioError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}", "mode")
    integrator = doc.get("integrator", "rk4")
    if integrator not in ("rk4", "euler"):
        raise ScenarioError(f"unknown integrator {integrator!r}", "integrator")

    gains = doc.get("initial_gains")
    if gains is not None:
        gains = _vec(gains, topology.num_edges, "initial_gains")

    lspec = doc.get("learning") or {}
    learning = Learning(
        discount=_num(lspec, "discount", "learning.", default=0.9),
        t_in=_num(lspec, "t_in", "learning.", default=50, integer=True, positive=True),
        forgetting=_num(lspec, "forgetting", "learning.", default=0.99),
        eps0=_num(lspec, "eps0", "learning.", default=0.7),
        eps1=_num(lspec, "eps1", "learning.", default=11.0),
        p0=_num(lspec, "p0", "learning.", default=100.0, positive=True),
        normalize=bool(lspec.get("normalize", True)),
        floor=_num(lspec, "floor", "learning.", default=1e-2, positive=True),
    )
    if not 0 <= learning.discount <= 1:
        raise ScenarioError("must lie in [0, 1]", "learning.discount")
    if not 0 < learning.forgetting <= 1:
        raise ScenarioError("must lie in (0, 1]", "learning.forgetting")
    if not 0 < learning.eps0 <= learning.eps1:
        raise ScenarioError("need 0 < eps0 <= eps1", "learning.eps0")

    obs = doc.get("observer") or {}
    gamma = _num(obs, "gamma", "observer.", default=10.0, positive=True)
    out = doc.get("output") or {}

    sc = Scenario(
        n=n,
        leader=leader,
        topology=topology,
        initial_states=s0,
        fov=fov,
        segments=_segments(doc.get("leader_input")),
        mode=mode,
        faults=_faults(doc.get("faults"), n),
        gamma=gamma,
        learning=learning,
        horizon=horizon,
        dt=dt,
        integrator=integrator,
        initial_gains=gains,
        seed=seed,
        out_dir=str(out.get("dir", "out")),
        csv_stride=_num(out, "csv_stride", "output.", default=1, integer=True, positive=True),
        name=str(doc.get("name", "")),
        content_hash=git_blob_hash(text.encode()),
    )
    check_initial_topology(sc)
    return sc


def check_initial_topology(sc: Scenario):
    """Every declared edge must start strictly inside its observer's field of view."""
    try:
        edge_terms(sc.team(), sc.initial_states, hessian=False)
    except TopologyViolation as exc:
        i, j = exc.edge
        raise ScenarioError(
            f"robot {j + 1} is not inside the field of view of robot {i + 1} at t = 0",
            f"edge [{i + 1}, {j + 1}]",
        ) from None
    except ValueError as exc:
        raise ScenarioError(str(exc), "initial_states") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(path)) from None
    return parse_scenario(text, str(path))


def bundled_scenario_path(name: str = "paper_6robot.scn") -> Path:
    return Path(__file__).resolve().parent.parent / "data" / name
