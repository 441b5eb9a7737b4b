"""Clipped-surrogate PPO on numpy, training over batches of quasi-static worlds.

Action space (our choice): 7 numbers in [-1, 1]. The first three scale to an
eef position delta of at most ``POS_SCALE`` per axis, the next three to a
rotation vector of at most ``ROT_SCALE`` rad per axis, and the last one closes
the gripper when positive. Targets are clamped into the workspace.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import contactsample, dsl, simworld
from ..errors import PreconditionError, RewardEvalError, VersionMismatch
from ..geometry import Pose, quat_from_axis_angle, quat_mul
from ..objectdb import Catalog, default_catalog
from ..providers import stable_seed
from ..taskgen import TaskSpec

CLIP = 0.2
GAE_LAMBDA = 0.95
GAMMA = 0.99
ENTROPY_COEF = 0.01
VALUE_COEF = 0.5
LEARNING_RATE = 3e-4
MINIBATCHES = 4
EPOCHS = 4
MAX_GRAD_NORM = 0.5
HIDDEN = (128, 128)
INIT_LOG_STD = -0.5
OBS_CLIP = 10.0

ACT_DIM = 7
POS_SCALE = 0.02
ROT_SCALE = 0.05
DEFAULT_HORIZON = 50
DEFAULT_POOL = 32

SNAPSHOT_MAGIC = b"TFPS"
SNAPSHOT_VERSION = 1


# ----------------------------------------------------------------------------- reward candidates


@dataclass(frozen=True)
class RewardCandidate:
    expression: str
    candidate_id: str
    source: str = "template"

    def __post_init__(self):
        if self.source not in ("provider", "template"):
            raise PreconditionError(f"unknown reward source {self.source!r}")

    def compile(self, symbols: dsl.Symbols) -> dsl.Expr:
        return dsl.compile_expr(self.expression, symbols, "reward_function", expect=dsl.NUM, extra_names={"success": dsl.NUM})


def eval_reward(expr: dsl.Expr, world: simworld.World, success: bool, candidate_id: str) -> float:
    try:
        r = float(expr(world, {"success": 1.0 if success else 0.0}))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise RewardEvalError(f"reward {candidate_id} failed: {exc}", candidate_id) from None
    if not math.isfinite(r):
        raise RewardEvalError(f"reward {candidate_id} is not finite", candidate_id)
    return r


# ----------------------------------------------------------------------------- networks


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


class Mlp:
    """tanh MLP; ``params`` is the flat list W1, b1, W2, b2, W3, b3."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator, out_gain: float = 1.0):
        self.params: list[np.ndarray] = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            self.params += [_orthogonal(rng, a, b, gain), np.zeros(b)]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        h = x
        n = len(self.params) // 2
        for i in range(n):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        n = len(self.params) // 2
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = grad_out
        for i in reversed(range(n)):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (1.0 - acts[i] ** 2)
        return grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = LEARNING_RATE, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > MAX_GRAD_NORM:
            grads = [g * (MAX_GRAD_NORM / (norm + 1e-12)) for g in grads]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class RunningNorm:
    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x: np.ndarray) -> None:
        bm, bv, bn = x.mean(axis=0), x.var(axis=0), len(x)
        delta = bm - self.mean
        tot = self.count + bn
        self.mean = self.mean + delta * bn / tot
        self.var = (self.var * self.count + bv * bn + delta**2 * self.count * bn / tot) / tot
        self.count = tot

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -OBS_CLIP, OBS_CLIP)


# ----------------------------------------------------------------------------- snapshot


@dataclass(eq=False)
class PolicySnapshot:
    """Gaussian policy plus value function.

    Binary layout (little-endian): magic "TFPS" | u16 version | u32 header length
    | header JSON (obs_dim, act_dim, hidden, obs_spec, stats) | f64 arrays in
    order: policy W1 b1 W2 b2 W3 b3, log_std, value W1 b1 W2 b2 W3 b3,
    obs mean, obs var, obs count. Matrices are row-major with shape (in, out).
    """

    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...]
    policy: list[np.ndarray]
    log_std: np.ndarray
    value: list[np.ndarray]
    obs_mean: np.ndarray
    obs_var: np.ndarray
    obs_count: float
    obs_spec: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = (self.obs_dim, *self.hidden)
        for net, out in ((self.policy, self.act_dim), (self.value, 1)):
            dims = list(zip((*sizes,), (*self.hidden, out)))
            if len(net) != 2 * len(dims):
                raise PreconditionError("network has the wrong number of layers")
            for i, (a, b) in enumerate(dims):
                if net[2 * i].shape != (a, b) or net[2 * i + 1].shape != (b,):
                    raise PreconditionError("network weight shapes do not match the declared sizes")
        if self.log_std.shape != (self.act_dim,) or self.obs_mean.shape != (self.obs_dim,):
            raise PreconditionError("snapshot vector shapes do not match the declared sizes")

    def __eq__(self, other) -> bool:
        return isinstance(other, PolicySnapshot) and self.to_bytes() == other.to_bytes()

    def _arrays(self) -> list[np.ndarray]:
        return [*self.policy, self.log_std, *self.value, self.obs_mean, self.obs_var, np.array([self.obs_count])]

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "hidden": list(self.hidden), "obs_spec": self.obs_spec, "stats": self.stats},
            sort_keys=True,
        ).encode()
        buf = bytearray(SNAPSHOT_MAGIC + struct.pack("<HI", SNAPSHOT_VERSION, len(header)) + header)
        for a in self._arrays():
            buf += np.ascontiguousarray(a, dtype="<f8").tobytes()
        return bytes(buf)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PolicySnapshot":
        if data[:4] != SNAPSHOT_MAGIC:
            raise VersionMismatch("not a policy snapshot")
        version, hl = struct.unpack_from("<HI", data, 4)
        if version != SNAPSHOT_VERSION:
            raise VersionMismatch(f"policy snapshot version {version} unsupported")
        h = json.loads(data[10 : 10 + hl])
        pos = 10 + hl
        sizes = [h["obs_dim"], *h["hidden"]]

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            a = np.frombuffer(data, "<f8", n, pos).reshape(shape).astype(float)
            pos += 8 * n
            return a

        def net(out):
            ps = []
            for a, b in zip(sizes, [*h["hidden"], out]):
                ps += [take((a, b)), take((b,))]
            return ps

        policy = net(h["act_dim"])
        log_std = take((h["act_dim"],))
        value = net(1)
        mean, var, count = take((h["obs_dim"],)), take((h["obs_dim"],)), float(take((1,))[0])
        if pos != len(data):
            raise VersionMismatch("policy snapshot has trailing bytes")
        return cls(h["obs_dim"], h["act_dim"], tuple(h["hidden"]), policy, log_std, value, mean, var, count, h["obs_spec"], h["stats"])

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return np.clip((obs - self.obs_mean) / np.sqrt(self.obs_var + 1e-8), -OBS_CLIP, OBS_CLIP)

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Mean action (or a sample when ``rng`` is given), clipped to [-1, 1]."""
        mlp = Mlp.__new__(Mlp)
        mlp.params = self.policy
        mu, _ = mlp.forward(self.normalize(np.atleast_2d(obs)))
        if rng is not None:
            mu = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return np.clip(mu, -1.0, 1.0)


# ----------------------------------------------------------------------------- environments


def apply_action(world: simworld.World, a: np.ndarray) -> simworld.Action:
    """Map a raw policy output to a workspace-clamped world action."""
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    ws = world.workspace
    p = np.clip(world.eef_pose.position + POS_SCALE * a[:3], ws.min, ws.max)
    rv = ROT_SCALE * a[3:6]
    ang = float(np.linalg.norm(rv))
    q = world.eef_pose.orientation
    if ang > 1e-12:
        q = quat_mul(quat_from_axis_angle(rv / ang, ang), q)
    return simworld.Action(Pose(p, q), bool(a[6] > 0.0))


class WorldBatch:
    """``n`` worlds initialised from a pool of precomputed reset states."""

    def __init__(
        self,
        task: TaskSpec,
        n: int,
        seed: int,
        catalog: Catalog | None = None,
        pool_size: int = DEFAULT_POOL,
        program: dsl.CompiledProgram | None = None,
        contact_target: str | None = None,
        hint: contactsample.AxisHint | None = None,
    ):
        self.catalog = catalog or default_catalog()
        self.program = program or simworld.compile_task(task, self.catalog)
        self.task = task
        self.n = n
        self.pool: list[bytes] = []
        self.grasps: list[list[Pose]] = []
        self.contact_target = contact_target
        hint = hint or contactsample.default_hint(task.family)
        for i in range(pool_size):
            s = stable_seed(task.task_id, "pool", seed, i) & 0xFFFFFFFF
            w = simworld.reset(task, s, self.catalog, program=self.program)
            self.pool.append(w.get_state().to_bytes())
            if contact_target is not None:
                rng = np.random.default_rng(s)
                valid = contactsample.sample_valid(w, contact_target, hint, contactsample.DEFAULT_CANDIDATES, rng)
                self.grasps.append([c.gripper_pose for c in valid])
        self.worlds = [simworld.reset(task, 0, self.catalog, program=self.program) for _ in range(n)]

    def reset(self, rng: np.random.Generator, contact_fraction: float = 0.0) -> np.ndarray:
        """Restore a pool state in every world; returns the contact-init mask."""
        idx = rng.integers(0, len(self.pool), self.n)
        use = rng.random(self.n) < contact_fraction if self.grasps else np.zeros(self.n, bool)
        picks = rng.random(self.n)
        for k, w in enumerate(self.worlds):
            w.set_state(self.pool[idx[k]])
            if use[k]:
                options = self.grasps[idx[k]]
                if not options:
                    use[k] = False
                    continue
                w.eef_pose = options[int(picks[k] * len(options))]
        return use

    def observe(self) -> np.ndarray:
        return np.array([simworld.compose_state(w) for w in self.worlds])


# ----------------------------------------------------------------------------- training


@dataclass
class TrainResult:
    snapshot: PolicySnapshot
    curve: list[float]
    contact_fractions: list[float]

    @property
    def final_success(self) -> float:
        return self.curve[-1] if self.curve else 0.0


def _gauss_logp(a: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (a - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * a.shape[1] * math.log(2 * math.pi)


def ppo_train(
    task: TaskSpec,
    reward: RewardCandidate | None = None,
    n_envs: int = 64,
    iters: int = 300,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
    contact_init: bool = False,
    catalog: Catalog | None = None,
    pool_size: int = DEFAULT_POOL,
    stop_at: float | None = None,
    on_iter: Callable[[int, float], None] | None = None,
    terminate_on_success: bool = False,
) -> TrainResult:
    """Train a policy on ``task``; deterministic in all arguments.

    One episode per environment per iteration, counted as a success if the
    predicate holds at any step. Episodes run to ``horizon`` unless
    ``terminate_on_success``; with positive shaping terms, ending on success
    would make success cost future reward. With ``contact_init`` a ``decay_schedule`` fraction of the
    episodes starts with the eef on a valid grasp candidate of the task's
    first role object. Training stops early once the success rate reaches
    ``stop_at``.
    """
    if n_envs < 1 or iters < 1 or horizon < 1:
        raise PreconditionError("n_envs, iters and horizon must be positive")
    catalog = catalog or default_catalog()
    program = simworld.compile_task(task, catalog)
    reward = reward or RewardCandidate(task.program.reward_function, f"{task.task_id}/task", "template")
    reward_expr = reward.compile(program.symbols)
    target = next(iter(task.roles.values()), None) if contact_init else None
    batch = WorldBatch(task, n_envs, seed, catalog, pool_size, program, target)
    rng = np.random.default_rng(stable_seed("ppo", task.task_id, seed))
    obs_dim = program.state_length
    pi = Mlp((obs_dim, *HIDDEN, ACT_DIM), rng, out_gain=0.01)
    vf = Mlp((obs_dim, *HIDDEN, 1), rng, out_gain=1.0)
    log_std = np.full(ACT_DIM, INIT_LOG_STD)
    pi_opt = Adam(pi.params + [log_std])
    vf_opt = Adam(vf.params)
    norm = RunningNorm(obs_dim)
    curve: list[float] = []
    fractions: list[float] = []
    rate = 0.0
    for it in range(iters):
        frac = contactsample.decay_schedule(rate) if contact_init else 0.0
        fractions.append(frac)
        batch.reset(rng, frac)
        obs_buf = np.zeros((horizon, n_envs, obs_dim))
        act_buf = np.zeros((horizon, n_envs, ACT_DIM))
        logp_buf = np.zeros((horizon, n_envs))
        rew_buf = np.zeros((horizon, n_envs))
        val_buf = np.zeros((horizon + 1, n_envs))
        alive = np.zeros((horizon, n_envs), bool)
        term = np.zeros((horizon, n_envs), bool)
        active = np.ones(n_envs, bool)
        succeeded = np.zeros(n_envs, bool)
        raw = batch.observe()
        for t in range(horizon):
            if not active.any():
                break
            norm_obs = norm(raw)
            mu, _ = pi.forward(norm_obs)
            a = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
            v, _ = vf.forward(norm_obs)
            obs_buf[t], act_buf[t], val_buf[t] = raw, a, v[:, 0]
            logp_buf[t] = _gauss_logp(a, mu, log_std)
            alive[t] = active
            for k in np.flatnonzero(active):
                w = batch.worlds[k]
                w.step(apply_action(w, a[k]))
                ok = simworld.check_success(w)
                rew_buf[t, k] = eval_reward(reward_expr, w, ok, reward.candidate_id)
                if ok:
                    succeeded[k] = True
                    if terminate_on_success:
                        term[t, k] = True
                        active[k] = False
                raw[k] = simworld.compose_state(w)
        # bootstrap value for episodes cut at the horizon
        last_v, _ = vf.forward(norm(raw))
        steps = int(alive.any(axis=1).sum())
        adv = np.zeros((horizon, n_envs))
        gae = np.zeros(n_envs)
        next_v = np.where(active, last_v[:, 0], 0.0)
        for t in reversed(range(steps)):
            nv = np.where(term[t], 0.0, next_v)
            delta = rew_buf[t] + GAMMA * nv - val_buf[t]
            gae = np.where(alive[t], delta + GAMMA * GAE_LAMBDA * np.where(term[t], 0.0, gae), 0.0)
            adv[t] = gae
            next_v = np.where(alive[t], val_buf[t], next_v)
        mask = alive[:steps].reshape(-1)
        b_obs = obs_buf[:steps].reshape(-1, obs_dim)[mask]
        b_act = act_buf[:steps].reshape(-1, ACT_DIM)[mask]
        b_logp = logp_buf[:steps].reshape(-1)[mask]
        b_adv = adv[:steps].reshape(-1)[mask]
        b_ret = b_adv + val_buf[:steps].reshape(-1)[mask]
        norm.update(b_obs)
        _update(pi, vf, log_std, pi_opt, vf_opt, norm(b_obs), b_act, b_logp, b_adv, b_ret, rng)
        rate = float(succeeded.mean())
        curve.append(rate)
        if on_iter is not None:
            on_iter(it, rate)
        if stop_at is not None and rate >= stop_at:
            break
    snap = PolicySnapshot(
        obs_dim,
        ACT_DIM,
        HIDDEN,
        [p.copy() for p in pi.params],
        log_std.copy(),
        [p.copy() for p in vf.params],
        norm.mean.copy(),
        norm.var.copy(),
        float(norm.count),
        [e.source for e in program.state],
        {"task_id": task.task_id, "reward": reward.candidate_id, "seed": seed, "iterations": len(curve), "curve": curve},
    )
    return TrainResult(snap, curve, fractions)


def _update(pi, vf, log_std, pi_opt, vf_opt, obs, act, old_logp, adv, ret, rng) -> None:
    n = len(obs)
    if n == 0:
        return
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    size = max(1, math.ceil(n / MINIBATCHES))
    for _ in range(EPOCHS):
        perm = rng.permutation(n)
        for start in range(0, n, size):
            idx = perm[start : start + size]
            o = obs[idx]
            _, g_pi = policy_loss(pi, log_std, o, act[idx], old_logp[idx], adv[idx])
            pi_opt.step(g_pi)
            _, g_v = value_loss(vf, o, ret[idx])
            vf_opt.step(g_v)


def policy_loss(pi: Mlp, log_std: np.ndarray, obs, act, old_logp, adv) -> tuple[float, list[np.ndarray]]:
    """Clipped surrogate loss minus the entropy bonus, with gradients for pi.params + [log_std]."""
    m = len(obs)
    mu, acts = pi.forward(obs)
    std = np.exp(log_std)
    logp = _gauss_logp(act, mu, log_std)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - CLIP, 1.0 + CLIP)
    surrogate = np.minimum(ratio * adv, clipped * adv)
    # gaussian entropy up to a constant is sum(log_std)
    loss = -float(surrogate.mean()) - ENTROPY_COEF * float(np.sum(log_std))
    # gradient flows only where the unclipped term is the minimum
    flow = ratio * adv <= clipped * adv
    dlogp = np.where(flow, -ratio * adv, 0.0) / m
    z = (act - mu) / std
    g_mu = dlogp[:, None] * (z / std)
    g_logstd = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - ENTROPY_COEF
    return loss, pi.backward(acts, g_mu) + [g_logstd]


def value_loss(vf: Mlp, obs, ret) -> tuple[float, list[np.ndarray]]:
    v, acts = vf.forward(obs)
    err = v[:, 0] - ret
    return VALUE_COEF * float(np.mean(err * err)), vf.backward(acts, VALUE_COEF * 2.0 * err[:, None] / len(obs))
