"""Two-domain point-mass "reach" benchmark.

A 2-D agent at state ``s`` moves toward a goal ``g`` under a clipped
proportional expert. Both domains share states, goals, proprioception
(``x = s``) and actions; they differ only in how ``(s, g)`` is rendered into an
observation vector. Source demonstrations cover goals in the whole square,
target demonstrations only the left half; the right half is the target-OOD
evaluation region.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng

DOMAINS = ("src", "tgt")
REGIONS = ("source", "target", "target_ood")
REACH_TOL = 0.05


@dataclass(frozen=True)
class BenchConfig:
    n_src: int = 200
    n_tgt: int = 10
    horizon: int = 40
    noise_std: float = 0.01
    d_o: int = 16
    seed: int = 0
    gain: float = 1.0
    a_max: float = 0.1
    start_radius: float = 0.1
    n_probes: int = 100
    # emission offsets are drawn N(0, bias_scale^2) per domain
    bias_scale: float = 0.5

    def __post_init__(self):
        if not self.n_src >= self.n_tgt >= 1:
            raise ValueError(f"need n_src >= n_tgt >= 1, got {self.n_src}, {self.n_tgt}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.horizon < 1 or self.d_o < 4 or self.n_probes < 1:
            raise ValueError("horizon >= 1, d_o >= 4 and n_probes >= 1 required")
        if not 0 <= self.start_radius < 1:
            raise ValueError("start_radius must lie in [0, 1)")


@dataclass(frozen=True)
class Emission:
    """Affine map ``(s, g) -> M @ concat(s, g) + b``."""

    M: np.ndarray
    b: np.ndarray

    def __call__(self, s, g):
        s, g = np.atleast_2d(s), np.atleast_2d(g)
        sg = np.concatenate([s, np.broadcast_to(g, s.shape)], axis=1)
        out = sg @ self.M.T + self.b
        return out


def make_emissions(cfg):
    """Independently drawn source and target emissions (unit-norm columns)."""
    rng = _rng.stream(cfg.seed, _rng.EMISSION)
    out = {}
    for dom in DOMAINS:
        M = rng.standard_normal((cfg.d_o, 4))
        M /= np.linalg.norm(M, axis=0, keepdims=True)
        b = cfg.bias_scale * rng.standard_normal(cfg.d_o)
        out[dom] = Emission(M, b)
    return out


def expert_action(s, g, gain=1.0, a_max=0.1):
    """``clip_norm(gain * (g - s), a_max)``; works on single states or batches."""
    s, g = np.asarray(s, dtype=np.float64), np.asarray(g, dtype=np.float64)
    if s.shape[-1] != 2 or g.shape[-1] != 2:
        raise ValueError("states and goals are 2-D")
    a = gain * (g - s)
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    scale = np.where(norm > a_max, a_max / np.where(norm > 0, norm, 1.0), 1.0)
    return a * scale


def emit_obs(domain, s, g, cfg, rng=None, emissions=None):
    """Observation of state ``s`` with goal ``g`` in ``domain``; noisy when ``rng`` is given."""
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    emissions = emissions or make_emissions(cfg)
    o = emissions[domain](s, g)
    if rng is not None and cfg.noise_std > 0:
        o = o + cfg.noise_std * rng.standard_normal(o.shape)
    return o[0] if np.ndim(s) == 1 else o


@dataclass
class Trajectory:
    domain: str
    region: str
    goal: np.ndarray
    obs: np.ndarray
    proprio: np.ndarray
    actions: np.ndarray
    # target-domain rendering of the same states (source trajectories only)
    shadow_obs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not len(self.obs) == len(self.proprio) == len(self.actions):
            raise ValueError("obs, proprio and actions must have equal lengths")

    def __len__(self):
        return len(self.proprio)

    def to_json(self):
        rec = {
            "domain": self.domain,
            "region": self.region,
            "goal": self.goal.tolist(),
            "obs": self.obs.tolist(),
            "proprio": self.proprio.tolist(),
            "actions": self.actions.tolist(),
        }
        if self.shadow_obs is not None:
            rec["shadow_obs"] = self.shadow_obs.tolist()
        return json.dumps(rec)

    @classmethod
    def from_json(cls, line):
        rec = json.loads(line)
        shadow = rec.get("shadow_obs")
        return cls(rec["domain"], rec["region"], np.array(rec["goal"], dtype=np.float64),
                   np.array(rec["obs"], dtype=np.float64), np.array(rec["proprio"], dtype=np.float64),
                   np.array(rec["actions"], dtype=np.float64),
                   None if shadow is None else np.array(shadow, dtype=np.float64))


@dataclass
class ProbeSet:
    region: np.ndarray  # region name per probe
    state: np.ndarray
    goal: np.ndarray
    start: np.ndarray  # rollout start paired with the goal
    o_src: np.ndarray
    o_tgt: np.ndarray

    def __len__(self):
        return len(self.region)

    def select(self, region):
        mask = self.region == region
        return ProbeSet(self.region[mask], self.state[mask], self.goal[mask], self.start[mask],
                        self.o_src[mask], self.o_tgt[mask])

    def to_jsonl(self):
        lines = []
        for i in range(len(self)):
            lines.append(json.dumps({
                "region": str(self.region[i]), "state": self.state[i].tolist(),
                "goal": self.goal[i].tolist(), "start": self.start[i].tolist(),
                "o_src": self.o_src[i].tolist(), "o_tgt": self.o_tgt[i].tolist()}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        return cls(np.array([r["region"] for r in recs]),
                   *(np.array([r[k] for r in recs], dtype=np.float64)
                     for k in ("state", "goal", "start", "o_src", "o_tgt")))


def _sample_goals(rng, region, n):
    lo_x, hi_x = {"source": (-1.0, 1.0), "target": (-1.0, 0.0), "target_ood": (0.0, 1.0)}[region]
    gx = rng.uniform(lo_x, hi_x, n)
    # keep goals strictly inside their half-plane
    if region == "target":
        gx = np.minimum(gx, -1e-3)
    elif region == "target_ood":
        gx = np.maximum(gx, 1e-3)
    return np.stack([gx, rng.uniform(-1.0, 1.0, n)], axis=1)


def rollout_expert(s0, g, cfg):
    """States s_0..s_{T-1}, actions a_0..a_{T-1} and the final state s_T."""
    states, actions = np.empty((cfg.horizon, 2)), np.empty((cfg.horizon, 2))
    s = np.asarray(s0, dtype=np.float64)
    for t in range(cfg.horizon):
        a = expert_action(s, g, cfg.gain, cfg.a_max)
        states[t], actions[t] = s, a
        s = s + a
    return states, actions, s


def _demos(cfg, domain, region, n, key, emissions):
    rng = _rng.stream(cfg.seed, key)
    goals = _sample_goals(rng, region, n)
    starts = rng.uniform(-cfg.start_radius, cfg.start_radius, (n, 2))
    noise = _rng.stream(cfg.seed, _rng.NOISE, key)
    out = []
    for g, s0 in zip(goals, starts):
        states, actions, s_T = rollout_expert(s0, g, cfg)
        if np.linalg.norm(s_T - g) >= REACH_TOL:
            raise RuntimeError(f"expert failed to reach goal {g} within horizon {cfg.horizon}")
        obs = emit_obs(domain, states, g, cfg, noise, emissions)
        shadow = emit_obs("tgt", states, g, cfg, noise, emissions) if domain == "src" else None
        out.append(Trajectory(domain, region, g, obs, states.copy(), actions, shadow))
    return out


def make_probes(cfg, emissions=None):
    emissions = emissions or make_emissions(cfg)
    rng = _rng.stream(cfg.seed, _rng.PROBES)
    parts = []
    for region in ("target", "target_ood"):
        g = _sample_goals(rng, region, cfg.n_probes)
        start = rng.uniform(-cfg.start_radius, cfg.start_radius, (cfg.n_probes, 2))
        t = rng.uniform(0.0, 1.0, (cfg.n_probes, 1))
        s = start + t * (g - start)
        parts.append((np.array([region] * cfg.n_probes), s, g, start,
                      emissions["src"](s, g), emissions["tgt"](s, g)))
    return ProbeSet(*(np.concatenate(cols) for cols in zip(*parts)))


def generate(cfg):
    """Build ``(D_src, D_tgt, probes)`` deterministically from ``cfg``."""
    emissions = make_emissions(cfg)
    D_src = _demos(cfg, "src", "source", cfg.n_src, _rng.SOURCE, emissions)
    D_tgt = _demos(cfg, "tgt", "target", cfg.n_tgt, _rng.TARGET, emissions)
    return D_src, D_tgt, make_probes(cfg, emissions)


def config_dict(cfg):
    return asdict(cfg)


def write_jsonl(path, trajectories):
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(t.to_json() + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [Trajectory.from_json(line) for line in fh if line.strip()]
