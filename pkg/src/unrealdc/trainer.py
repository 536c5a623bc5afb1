"""Asynchronous training: parallel workers, one global parameter store,
a shared RMSProp optimizer, and the combined five-component objective.

Workers copy the global parameters, collect a short rollout against a
private environment, compute gradients of the total loss (on-policy
actor-critic terms from the fresh rollout, value-replay / reward-
prediction / pixel-control terms from a private replay buffer), and
apply them asynchronously to the global store. With a single worker the
whole run is deterministic.
"""

from __future__ import annotations

import configparser
import threading
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import netcore as nc
from .losses import (
    LossWeights,
    Rollout,
    entropy_of,
    n_step_returns,
    pc_pseudo_reward,
    pc_targets,
    pc_loss,
    policy_loss,
    rp_batch_loss,
    total_loss,
    value_loss,
    vr_loss,
)
from .minidoom import (
    ACTION_PROFILE,
    NAVIGATION_PROFILE,
    ACTION_AGENT_ACTIONS,
    NAVIGATION_AGENT_ACTIONS,
    MapSpec,
    MiniDoomEnv,
)
from .replay import ReplayBuffer, Transition, WarmupError

LOG_HEADER = "global_step,worker,episode,kills,deaths,objects,reward,loss_pi,loss_v,loss_vr,loss_rp,loss_pc"

ROLE_ACTIONS = {
    "action": ACTION_AGENT_ACTIONS,
    "navigation": NAVIGATION_AGENT_ACTIONS,
}
ROLE_PROFILES = {
    "action": ACTION_PROFILE,
    "navigation": NAVIGATION_PROFILE,
}

NET_PROFILES = {
    "tiny": nc.tiny_config,
    "small": nc.small_config,
    "paper": nc.paper_config,
}


class ConfigError(ValueError):
    """Invalid or inconsistent training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    role: str = "navigation"
    profile: str = "small"
    maps: tuple = ()
    workers: int = 4
    total_steps: int = 500_000
    rollout_len: int = 20
    seed: int = 0
    lr: float = 7e-4
    lr_decay: bool = True
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 0.1
    grad_clip: float = 40.0
    weights: LossWeights = field(default_factory=LossWeights)
    replay_capacity: int = 2000
    rp_batch: int = 8
    episode_step_limit: int = 2100
    checkpoint_interval: int = 0
    dtype: str = "float32"

    def validate(self):
        if self.role not in ROLE_ACTIONS:
            raise ConfigError(f"unknown role {self.role!r} (expected action|navigation)")
        if self.profile not in NET_PROFILES:
            raise ConfigError(f"unknown net profile {self.profile!r}")
        if not self.maps:
            raise ConfigError("at least one map is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.rollout_len < 1:
            raise ConfigError("rollout length must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.rmsprop_eps <= 0:
            raise ConfigError("rmsprop_eps must be > 0")
        self.weights.validate()
        return self

    def net_config(self) -> nc.NetworkConfig:
        return NET_PROFILES[self.profile](len(ROLE_ACTIONS[self.role]), dtype=self.dtype)


def parse_train_config(path, overrides: dict | None = None) -> TrainConfig:
    """Read the INI-style config file; `overrides` wins over file values."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    ov = dict(overrides or {})

    def get(section, key, fallback):
        if key in ov and ov[key] is not None:
            return ov[key]
        if parser.has_option(section, key):
            return parser.get(section, key)
        return fallback

    def as_int(x):
        return int(str(x))

    def as_float(x):
        return float(str(x))

    def as_bool(x):
        if isinstance(x, bool):
            return x
        s = str(x).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {x!r}")

    maps_raw = get("run", "maps", "")
    if isinstance(maps_raw, (list, tuple)):
        maps = tuple(maps_raw)
    else:
        maps = tuple(m.strip() for m in str(maps_raw).split(",") if m.strip())
    try:
        cfg = TrainConfig(
            role=str(get("run", "role", "navigation")),
            profile=str(get("run", "profile", "small")),
            maps=maps,
            workers=as_int(get("run", "workers", 4)),
            total_steps=as_int(get("run", "steps", 500_000)),
            rollout_len=as_int(get("rollout", "length", 20)),
            seed=as_int(get("run", "seed", 0)),
            lr=as_float(get("optimizer", "lr", 7e-4)),
            lr_decay=as_bool(get("optimizer", "lr_decay", True)),
            rmsprop_decay=as_float(get("optimizer", "rmsprop_decay", 0.99)),
            rmsprop_eps=as_float(get("optimizer", "rmsprop_eps", 0.1)),
            grad_clip=as_float(get("optimizer", "grad_clip", 40.0)),
            weights=LossWeights(
                gamma=as_float(get("losses", "gamma", 0.99)),
                lambda_vr=as_float(get("losses", "lambda_vr", 1.0)),
                lambda_rp=as_float(get("losses", "lambda_rp", 1.0)),
                lambda_pc=as_float(get("losses", "lambda_pc", 0.05)),
                gamma_pc=as_float(get("losses", "gamma_pc", 0.9)),
                entropy_beta=as_float(get("losses", "entropy_beta", 0.01)),
            ),
            replay_capacity=as_int(get("rollout", "replay_capacity", 2000)),
            rp_batch=as_int(get("rollout", "rp_batch", 8)),
            episode_step_limit=as_int(get("episode", "step_limit", 2100)),
            checkpoint_interval=as_int(get("run", "checkpoint_interval", 0)),
            dtype=str(get("run", "dtype", "float32")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["maps"] = list(cfg.maps)
    return d


# -- shared optimizer -------------------------------------------------------


def rmsprop_apply(params, grads, g_state, lr, decay, eps):
    """In-place shared RMSProp: g <- decay*g + (1-decay)*grad^2, then
    param <- param - lr * grad / sqrt(g + eps)."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    for name, grad in grads.items():
        g = g_state[name]
        np.multiply(g, decay, out=g)
        g += (1.0 - decay) * np.square(grad)
        params[name] -= lr * grad / np.sqrt(g + eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = float(sum(float(np.square(g).sum()) for g in grads.values()))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class GlobalStore:
    """Shared parameters + optimizer statistics. Reads are lock-free
    (readers may observe a mix of parameter versions); each apply is
    atomic under the store lock."""

    def __init__(self, params: nc.Parameters, config: TrainConfig):
        self.params = params
        self.g = {k: np.zeros_like(v) for k, v in params.items()}
        self.config = config
        self.lock = threading.Lock()
        self.global_step = 0
        self.applied_updates = 0
        self.skipped_updates = 0
        self.log_rows: list = []
        self.errors: list = []
        self._log_file = None
        self._next_checkpoint = None
        self._out_dir = None

    def snapshot(self) -> nc.Parameters:
        return nc.Parameters(self.params.config, {k: v.copy() for k, v in self.params.items()})

    def learning_rate(self) -> float:
        if not self.config.lr_decay or self.config.total_steps <= 0:
            return self.config.lr
        frac = 1.0 - self.global_step / self.config.total_steps
        return self.config.lr * max(frac, 0.0)

    def budget_left(self) -> bool:
        return self.global_step < self.config.total_steps

    def add_steps(self, n: int):
        with self.lock:
            self.global_step += n
            return self.global_step

    def apply(self, grads: dict) -> bool:
        """Apply one update; returns False when skipped (non-finite)."""
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                with self.lock:
                    self.skipped_updates += 1
                return False
        with self.lock:
            lr = self.learning_rate()
            rmsprop_apply(self.params, grads, self.g, lr,
                          self.config.rmsprop_decay, self.config.rmsprop_eps)
            self.applied_updates += 1
            if (
                self._out_dir is not None
                and self._next_checkpoint is not None
                and self.global_step >= self._next_checkpoint
            ):
                step = self.global_step
                nc.save_params(self._out_dir / f"checkpoint_{step}.npz", self.params)
                interval = self.config.checkpoint_interval
                self._next_checkpoint += interval * (
                    (step - self._next_checkpoint) // interval + 1
                )
        return True

    def log(self, row: dict):
        with self.lock:
            row["global_step"] = self.global_step
            self.log_rows.append(row)
            if self._log_file is not None:
                self._log_file.write(
                    "{global_step},{worker},{episode},{kills},{deaths},{objects},"
                    "{reward:.6f},{loss_pi:.6f},{loss_v:.6f},{loss_vr:.6f},"
                    "{loss_rp:.6f},{loss_pc:.6f}\n".format(**row)
                )
                self._log_file.flush()

    def record_error(self, worker_id: int, exc: BaseException):
        with self.lock:
            self.errors.append((worker_id, "".join(traceback.format_exception(exc))))


class Worker:
    """One actor-learner: private environment, replay buffer, and RNG streams."""

    def __init__(self, worker_id: int, store: GlobalStore, map_spec: MapSpec,
                 net_cfg: nc.NetworkConfig, seed_seq: np.random.SeedSequence):
        cfg = store.config
        self.id = worker_id
        self.store = store
        self.cfg = cfg
        self.net_cfg = net_cfg
        self.actions = ROLE_ACTIONS[cfg.role]
        self.profile = ROLE_PROFILES[cfg.role]
        self.env = MiniDoomEnv(map_spec, self.profile,
                               obs_dims=(net_cfg.input_h, net_cfg.input_w))
        self.replay = ReplayBuffer(cfg.replay_capacity)
        act_seq, rep_seq, env_seq = seed_seq.spawn(3)
        self.action_rng = np.random.default_rng(act_seq)
        self.replay_rng = np.random.default_rng(rep_seq)
        self.episode_seed_rng = np.random.default_rng(env_seq)
        self.rstate = nc.RecurrentState.zeros(net_cfg)
        self.obs = None
        self.episode = 0
        self.episode_events: dict = {}
        self.episode_reward = 0.0
        self.steps_taken = 0
        self.local_applied = 0
        self.last_losses = dict.fromkeys(
            ("loss_pi", "loss_v", "loss_vr", "loss_rp", "loss_pc"), 0.0
        )

    # -- episode plumbing ----------------------------------------------

    def _begin_episode(self):
        seed = int(self.episode_seed_rng.integers(0, 2**63 - 1))
        self.obs = self.env.reset(seed)
        self.rstate = nc.RecurrentState.zeros(self.net_cfg)
        self.episode_events = {"kill": 0, "death": 0, "object_gathered": 0}
        self.episode_reward = 0.0

    def _finish_episode(self):
        self.store.log(
            {
                "worker": self.id,
                "episode": self.episode,
                "kills": self.episode_events.get("kill", 0),
                "deaths": self.episode_events.get("death", 0),
                "objects": self.episode_events.get("object_gathered", 0),
                "reward": self.episode_reward,
                **self.last_losses,
            }
        )
        self.episode += 1
        self.obs = None

    # -- one asynchronous update ----------------------------------------

    def collect_rollout(self, params: nc.Parameters):
        """Run up to rollout_len environment steps with the local params."""
        if self.obs is None:
            self._begin_episode()
        start_state = self.rstate.copy()
        frames, actions, rewards, dones = [], [], [], []
        for _ in range(self.cfg.rollout_len):
            policy, self.rstate = nc.policy_step(params, self.obs, self.rstate)
            p = np.asarray(policy, dtype=np.float64)
            p /= p.sum()
            a_idx = int(self.action_rng.choice(len(p), p=p))
            outcome = self.env.step(self.actions[a_idx])
            frames.append(self.obs)
            actions.append(a_idx)
            rewards.append(outcome.reward)
            dones.append(outcome.done)
            self.replay.push(Transition(self.obs, a_idx, outcome.reward, outcome.done))
            for name, count in outcome.events.items():
                self.episode_events[name] = self.episode_events.get(name, 0) + count
            self.episode_reward += outcome.reward
            self.obs = outcome.observation
            self.steps_taken += 1
            if outcome.done:
                self._finish_episode()
                break
        if dones[-1]:
            bootstrap = None
        else:
            bootstrap = nc.value_step(params, self.obs, self.rstate)
        rollout = Rollout(
            frames=np.asarray(frames, dtype=self.net_cfg.np_dtype),
            actions=np.asarray(actions, dtype=int),
            rewards=np.asarray(rewards, dtype=np.float64),
            dones=np.asarray(dones, dtype=bool),
            bootstrap_value=bootstrap,
        )
        return rollout, start_state

    def _replay_window(self):
        length = self.cfg.rollout_len + 1
        seq = self.replay.sample_uniform_sequence(length, self.replay_rng)
        frames = np.asarray([t.observation for t in seq], dtype=self.net_cfg.np_dtype)
        actions = np.asarray([t.action for t in seq], dtype=int)
        rewards = np.asarray([t.reward for t in seq], dtype=np.float64)
        return frames, actions, rewards

    def _rp_batch(self):
        samples = self.replay.sample_rp_batch(self.cfg.rp_batch, self.replay_rng)
        windows = np.asarray([w for w, _ in samples], dtype=self.net_cfg.np_dtype)
        classes = np.asarray([c for _, c in samples], dtype=int)
        return windows, classes

    def compute_update(self, params: nc.Parameters, rollout: Rollout,
                       start_state: nc.RecurrentState):
        """Gradients of the total loss; returns (grads, component values)."""
        cfg, net_cfg, w = self.cfg, self.net_cfg, self.cfg.weights
        n = len(rollout.actions)
        returns = n_step_returns(rollout, w.gamma)
        try:
            replay_frames, replay_actions, replay_rewards = self._replay_window()
            replay_ready = True
        except WarmupError:
            replay_ready = False
        try:
            rp_windows, rp_classes = self._rp_batch()
            rp_ready = True
        except WarmupError:
            rp_ready = False

        if replay_ready:
            prs = np.stack(
                [
                    pc_pseudo_reward(replay_frames[t], replay_frames[t + 1],
                                     (net_cfg.pc_grid_h, net_cfg.pc_grid_w))
                    for t in range(len(replay_frames) - 1)
                ]
            )

        components = {}

        def loss_fn(tp):
            feats = nc.conv_features(tp, net_cfg, rollout.frames)
            fc = ad.relu(ad.matmul(feats, tp["fc_w"]) + tp["fc_b"])
            h_seq, _ = nc.lstm_sequence(tp, net_cfg, fc, start_state)
            log_probs = nc.policy_log_probs(tp, h_seq)
            values = nc.values_from(tp, h_seq)
            taken = log_probs[(np.arange(n), rollout.actions)]
            ents = entropy_of(log_probs)
            l_pi = policy_loss(returns, values.value, taken, ents, w.entropy_beta)
            l_v = value_loss(returns, values)

            l_vr = 0.0
            l_pc = 0.0
            if replay_ready:
                r_feats = nc.conv_features(tp, net_cfg, replay_frames)
                r_fc = ad.relu(ad.matmul(r_feats, tp["fc_w"]) + tp["fc_b"])
                r_h, _ = nc.lstm_sequence(
                    tp, net_cfg, r_fc, nc.RecurrentState.zeros(net_cfg)
                )
                r_values = nc.values_from(tp, r_h)
                L = len(replay_frames) - 1
                r_rollout = Rollout(
                    frames=replay_frames[:L],
                    actions=replay_actions[:L],
                    rewards=replay_rewards[:L],
                    dones=np.zeros(L, dtype=bool),
                    bootstrap_value=float(r_values.value[L]),
                )
                r_returns = n_step_returns(r_rollout, w.gamma)
                l_vr = vr_loss(r_returns, r_values[: L])
                pc_q = nc.pc_q_from(tp, net_cfg, r_h)
                boot_q = pc_q.value[L].max(axis=-1)
                tgts = pc_targets(prs, boot_q, w.gamma_pc)
                l_pc = pc_loss(pc_q[:L], replay_actions[:L], tgts)

            l_rp = 0.0
            if rp_ready:
                logits = nc.rp_logits_from_windows(tp, net_cfg, rp_windows)
                l_rp = rp_batch_loss(logits, rp_classes)

            for key, comp in (("loss_pi", l_pi), ("loss_v", l_v), ("loss_vr", l_vr),
                              ("loss_rp", l_rp), ("loss_pc", l_pc)):
                components[key] = float(comp.value) if isinstance(comp, ad.Tensor) else float(comp)
            return total_loss(l_pi, l_v, l_vr, l_rp, l_pc, w)

        grads = nc.gradients(params, loss_fn)
        clip_gradients(grads, cfg.grad_clip)
        return grads, components

    def run_update(self) -> bool:
        """One full cycle; returns False when the step budget is exhausted."""
        if not self.store.budget_left():
            return False
        params = self.store.snapshot()
        rollout, start_state = self.collect_rollout(params)
        self.store.add_steps(len(rollout.actions))
        try:
            grads, components = self.compute_update(params, rollout, start_state)
        except nc.NonFiniteLossError:
            with self.store.lock:
                self.store.skipped_updates += 1
            return True
        self.last_losses = components
        if self.store.apply(grads):
            self.local_applied += 1
        return True

    def run(self):
        try:
            while self.run_update():
                pass
        except Exception as exc:  # other workers keep running
            self.store.record_error(self.id, exc)


@dataclass
class TrainResult:
    params: nc.Parameters
    opt_g: dict
    log_rows: list
    global_steps: int
    applied_updates: int
    per_worker_applied: list
    skipped_updates: int
    worker_steps: list
    errors: list


def train(config: TrainConfig, map_specs: list, out_dir=None,
          initial_params: nc.Parameters | None = None,
          initial_opt_g: dict | None = None) -> TrainResult:
    """Run asynchronous training to the step budget.

    ``map_specs`` are pre-loaded MapSpec objects; worker i trains on
    map_specs[i % len(map_specs)]. With workers == 1 everything runs on
    the calling thread and the run is bit-reproducible.
    """
    config.validate()
    if not map_specs:
        raise ConfigError("at least one map is required")
    net_cfg = config.net_config()
    if initial_params is not None:
        if initial_params.config != net_cfg:
            raise ConfigError("initial parameters do not match the configured network")
        params = initial_params.copy()
    else:
        params = nc.init_params(net_cfg, config.seed)
    store = GlobalStore(params, config)
    if initial_opt_g is not None:
        store.g = {k: v.copy() for k, v in initial_opt_g.items()}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        store._out_dir = out_dir
        store._log_file = open(out_dir / "train_log.csv", "w", encoding="utf-8")
        store._log_file.write(LOG_HEADER + "\n")
        store._log_file.flush()
        if config.checkpoint_interval > 0:
            store._next_checkpoint = config.checkpoint_interval

    root = np.random.SeedSequence(config.seed)
    worker_seqs = root.spawn(config.workers)
    workers = [
        Worker(i, store, map_specs[i % len(map_specs)], net_cfg, worker_seqs[i])
        for i in range(config.workers)
    ]
    try:
        if config.workers == 1:
            workers[0].run()
        else:
            threads = [
                threading.Thread(target=w.run, name=f"worker-{w.id}", daemon=True)
                for w in workers
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        if out_dir is not None:
            nc.save_params(out_dir / "checkpoint_final.npz", store.params)
    finally:
        if store._log_file is not None:
            store._log_file.close()
            store._log_file = None
    return TrainResult(
        params=store.snapshot(),
        opt_g={k: v.copy() for k, v in store.g.items()},
        log_rows=list(store.log_rows),
        global_steps=store.global_step,
        applied_updates=store.applied_updates,
        per_worker_applied=[w.local_applied for w in workers],
        skipped_updates=store.skipped_updates,
        worker_steps=[w.steps_taken for w in workers],
        errors=list(store.errors),
    )
