"""Adversarial hierarchical imitation: rollouts, E-step, posterior/discriminator/policy updates."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .data import DUMMY_OPTION, Batch, Trajectory, one_hot
from .diffcore import Tensor
from .envs import DemoSet, make_env
from .errors import DimensionError, NumericError
from .objectives import (MODES, AirlDiscriminator, GailDiscriminator, ObjectiveWeights,
                         combined_return, disc_accuracy, disc_loss, hgail_disc_loss,
                         ldi_estimate)
from .option_policy import HierarchicalPolicy, rollout
from .posterior import RecurrentPosterior

ANNOTATIONS = ("inferred", "provided")


@dataclass
class TrainConfig:
    env: str = "fourrooms-t1"
    mode: str = "h-airl"
    expert_annotations: str = "inferred"
    num_options: int = 2
    embed_dim: int = 16
    context_scale: float = 1.0        # init range of the option context rows, times 1/sqrt(E)
    low_init_scale: float = 1.0       # init range of the low-level network, times 1/sqrt(fan_in)
    context_grad_from_low: bool = False
    num_heads: int = 2
    policy_hidden: tuple = (64, 64)
    posterior_hidden: int = 64
    disc_hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    horizon: int | None = None        # None: the environment's own horizon
    rollouts_per_episode: int = 8
    episodes: int = 500
    alpha1: float = 0.1
    alpha2: float = 1.0
    lr_policy: float = 2e-3
    lr_value: float = 1e-3
    lr_posterior: float = 1e-3
    lr_disc: float = 3e-4
    clip_ratio: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    max_grad_norm: float = 1.0
    posterior_steps: int = 5
    disc_steps: int = 5
    em_interval: int = 10
    sampled_entropy: bool = False      # single-sample entropy estimate in the bound reward
    reward_clip: float = 20.0
    eval_episodes: int = 20
    eval_greedy: bool = False
    checkpoint_interval: int = 0       # 0: only the final checkpoint
    seed: int = 0

    def __post_init__(self):
        for name in ("policy_hidden", "disc_hidden", "value_hidden"):
            setattr(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.expert_annotations not in ANNOTATIONS:
            raise ValueError(f"expert_annotations must be one of {ANNOTATIONS}")
        if self.num_options < 1 or self.rollouts_per_episode < 1 or self.episodes < 0:
            raise ValueError("num_options and rollouts_per_episode must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("objective weights must be non-negative")
        if self.em_interval < 1:
            raise ValueError("em_interval must be >= 1")
        if self.mode == "option-airl":
            self.alpha1 = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.alpha1, self.alpha2)


METRIC_COLUMNS = ("episode", "env_return_mean", "env_return_std", "ldi", "disc_loss", "disc_acc")


def metric_columns(num_options: int) -> list[str]:
    return list(METRIC_COLUMNS) + [f"option_usage_{i}" for i in range(num_options)]


# --- policy optimizer --------------------------------------------------------

class ValueNet:
    """Scalar baseline on the extended state ``(S, onehot Z)``."""

    def __init__(self, state_dim: int, num_options: int, hidden: Sequence[int],
                 rng: np.random.Generator):
        self.num_options = num_options
        self.params = dc.ParamStore()
        self.net = dc.MLP(self.params, "v", (state_dim + num_options, *hidden, 1), rng)

    def __call__(self, S, Z) -> Tensor:
        return self.net(np.concatenate([np.atleast_2d(S), one_hot(Z, self.num_options)], axis=1)).reshape(-1)


def gae(rewards: np.ndarray, values: np.ndarray, mask: np.ndarray, lengths: np.ndarray,
        terminated: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantages on padded ``(B, L)`` rewards.

    ``values`` has shape ``(B, L+1)``; the value after the last real step is
    used as a bootstrap for truncated episodes and replaced by 0 for terminated ones.
    """
    B, L = rewards.shape
    v = values.copy()
    for b in range(B):
        n = lengths[b]
        if terminated[b]:
            v[b, n] = 0.0
        v[b, n + 1:] = 0.0
    adv = np.zeros((B, L))
    last = np.zeros(B)
    for t in range(L - 1, -1, -1):
        delta = rewards[:, t] + gamma * v[:, t + 1] - v[:, t]
        last = delta + gamma * lam * last
        last = np.where(mask[:, t], last, 0.0)
        adv[:, t] = last
    return adv


def surrogate_loss(policy: HierarchicalPolicy, S, Z, Zn, A, old_logp, adv, clip: float) -> Tensor:
    """Negative clipped surrogate ``-mean(min(r A, clip(r, 1-eps, 1+eps) A))``."""
    ratio = dc.exp(policy.joint_log_prob(S, Z, Zn, A) - np.asarray(old_logp))
    adv = np.asarray(adv, dtype=np.float64)
    return -dc.minimum(ratio * adv, dc.clip(ratio, 1.0 - clip, 1.0 + clip) * adv).mean()


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    std = adv.std()
    if std < eps:  # degenerate batch: leave as is
        return adv
    return (adv - adv.mean()) / std


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float


def policy_update(policy: HierarchicalPolicy, value: ValueNet, batch: Batch,
                  old_logp: np.ndarray, rewards: np.ndarray, pol_opt: dc.Adam,
                  val_opt: dc.Adam, cfg: TrainConfig, entropy_weight: float = 0.0) -> UpdateStats:
    """Clipped-surrogate updates on the extended MDP ``(S, Z') -> (Z, A)``."""
    B, L = batch.mask.shape
    with dc.no_grad():
        flat_S = batch.states.reshape(B * (L + 1), -1)
        flat_Z = batch.options.reshape(-1)
        values = value(flat_S, flat_Z).data.reshape(B, L + 1)
    adv = gae(rewards, values, batch.mask, batch.lengths, batch.terminated, cfg.gamma,
              cfg.gae_lambda)
    bi, ti = batch.step_index()
    returns = (adv + values[:, :L])[bi, ti]
    adv = normalize_advantages(adv[bi, ti])
    S, Z, Zn, A, _ = batch.steps()
    p_loss = v_loss = float("nan")
    for _ in range(cfg.ppo_epochs):
        pol_opt.zero_grad()
        loss = surrogate_loss(policy, S, Z, Zn, A, old_logp, adv, cfg.clip_ratio)
        if entropy_weight > 0:
            # The bound's entropy term depends on theta directly, not only through
            # which options get sampled; add that pathwise gradient here.
            loss = loss - entropy_weight * policy.high_level_entropy(S, Z).mean()
        p_loss = _finite(loss, "policy surrogate")
        loss.backward()
        pol_opt.step()
        val_opt.zero_grad()
        vl = dc.square(value(S, Z) - returns).mean()
        v_loss = _finite(vl, "value loss")
        vl.backward()
        val_opt.step()
    return UpdateStats(p_loss, v_loss)


def _finite(loss: Tensor, what: str) -> float:
    v = loss.item()
    if not math.isfinite(v):
        raise NumericError(f"{what} is not finite ({v})")
    return v


# --- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    returns: np.ndarray
    option_usage: np.ndarray
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def std(self) -> float:
        return float(self.returns.std())


def option_usage(trajs: Sequence[Trajectory], num_options: int) -> np.ndarray:
    chosen = np.concatenate([t.options[1:] for t in trajs]) if trajs else np.zeros(0, int)
    if chosen.size == 0:
        return np.zeros(num_options)
    return np.bincount(chosen, minlength=num_options) / chosen.size


def evaluate(env, policy: HierarchicalPolicy, episodes: int, rng: np.random.Generator,
             greedy: bool = True) -> EvalResult:
    trajs = rollout(env, policy, rng, n=episodes, greedy=greedy)
    return EvalResult(np.array([t.env_return for t in trajs]),
                      option_usage(trajs, policy.num_options), trajs)


# --- trainer -----------------------------------------------------------------

class Trainer:
    """Holds all networks and runs the alternating updates episode by episode."""

    def __init__(self, config: TrainConfig, demos: DemoSet, env=None):
        if demos is None or len(demos) == 0:
            raise ValueError("demonstration set is empty")
        self.cfg = cfg = config
        self.env = env if env is not None else make_env(cfg.env, horizon=cfg.horizon)
        if demos.state_dim != self.env.state_dim or demos.action_spec != self.env.action_spec:
            raise DimensionError("demonstrations do not match the environment dimensions")
        self.demos = demos
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.build_networks()
        self.expert_options: list[np.ndarray] | None = None
        if cfg.expert_annotations == "provided":
            if not demos.annotated:
                raise ValueError("expert_annotations=provided but the demos carry no options")
            for t in demos.trajectories:
                if t.options.max() >= cfg.num_options:
                    raise ValueError("demo option index exceeds num_options")
            self.expert_options = [t.options.copy() for t in demos.trajectories]
        self.episode = 0
        self.em_log: list[dict] = []

    def build_networks(self, parts: Sequence[str] = ("policy", "posterior", "disc", "value")):
        cfg, env = self.cfg, self.env
        s, spec, N = env.state_dim, env.action_spec, cfg.num_options
        rngs = {name: np.random.default_rng([cfg.seed, 100 + i])
                for i, name in enumerate(("policy", "posterior", "disc", "value"))}
        if "policy" in parts:
            self.policy = HierarchicalPolicy(s, spec, N, cfg.embed_dim, cfg.num_heads,
                                             cfg.policy_hidden, rngs["policy"],
                                             context_grad_from_low=cfg.context_grad_from_low,
                                             context_scale=cfg.context_scale,
                                             low_init_scale=cfg.low_init_scale)
            self.pol_opt = dc.Adam(self.policy.params, cfg.lr_policy, max_grad_norm=cfg.max_grad_norm)
        if "posterior" in parts:
            self.posterior = RecurrentPosterior(s, spec, N, cfg.posterior_hidden,
                                                cfg.posterior_hidden, rngs["posterior"])
            self.post_opt = dc.Adam(self.posterior.params, cfg.lr_posterior,
                                    max_grad_norm=cfg.max_grad_norm)
        if "disc" in parts:
            cls = GailDiscriminator if cfg.mode == "h-gail" else AirlDiscriminator
            self.disc = cls(s, spec, N, cfg.disc_hidden, rngs["disc"])
            self.disc_opt = dc.Adam(self.disc.params, cfg.lr_disc, max_grad_norm=cfg.max_grad_norm)
        if "value" in parts:
            self.value = ValueNet(s, N, cfg.value_hidden, rngs["value"])
            self.val_opt = dc.Adam(self.value.params, cfg.lr_value, max_grad_norm=cfg.max_grad_norm)

    # --- pieces of one episode ---------------------------------------------
    def expert_batch(self) -> Batch:
        return Batch.from_trajectories(self.demos.trajectories, self.env.action_spec,
                                       options=self.expert_options)

    def e_step(self) -> float:
        """Annotate the expert data with options sampled from a frozen posterior snapshot."""
        snapshot = RecurrentPosterior(self.env.state_dim, self.env.action_spec, self.cfg.num_options,
                                      self.cfg.posterior_hidden, self.cfg.posterior_hidden)
        snapshot.load_state_dict(self.posterior.state_dict())
        batch = Batch.from_trajectories(self.demos.trajectories, self.env.action_spec)
        Z = snapshot.e_step_sample(batch.observations(), self.rng)
        self.expert_options = [Z[b, : t.length + 1].copy()
                               for b, t in enumerate(self.demos.trajectories)]
        bound = self.em_bound()
        self.em_log.append({"iteration": len(self.em_log), "episode": self.episode,
                            "em_bound": bound})
        return bound

    def em_bound(self) -> float:
        """Mean over expert trajectories of ``sum_t f(S_t, Z_t, Z_{t+1}, A_t)`` under the
        current annotations (the EM bound up to the unknown log-partition and dynamics)."""
        eb = self.expert_batch()
        S, Z, Zn, _, A_enc = eb.steps()
        with dc.no_grad():
            if isinstance(self.disc, AirlDiscriminator):
                f = self.disc.f(S, Z, Zn, A_enc).data
            else:  # GAIL logits play the role of -f (expert is the 0 class)
                f = -self.disc.logit(S, Z, Zn, A_enc).data
        return float(f.sum() / eb.size)

    def update_posterior(self, gen: Batch) -> float:
        loss_v = float("nan")
        for _ in range(self.cfg.posterior_steps):
            self.post_opt.zero_grad()
            loss = -self.posterior.batch_log_probs(gen).sum() / gen.size
            loss_v = _finite(loss, "posterior loss")
            loss.backward()
            self.post_opt.step()
        return loss_v

    def disc_objective(self, expert: Batch, gen: Batch) -> Tensor:
        if isinstance(self.disc, GailDiscriminator):
            return hgail_disc_loss(expert, gen, self.disc, self.env.action_spec)
        return disc_loss(expert, gen, self.policy, self.disc)

    def update_discriminator(self, expert: Batch, gen: Batch) -> float:
        loss_v = float("nan")
        for _ in range(self.cfg.disc_steps):
            self.disc_opt.zero_grad()
            loss = self.disc_objective(expert, gen)
            loss_v = _finite(loss, "discriminator loss")
            loss.backward()
            self.disc_opt.step()
        return loss_v

    def train_episode(self) -> dict:
        cfg = self.cfg
        trajs = rollout(self.env, self.policy, self.rng, n=cfg.rollouts_per_episode)
        gen = Batch.from_trajectories(trajs, self.env.action_spec)
        if cfg.expert_annotations == "inferred" and self.episode % cfg.em_interval == 0:
            self.e_step()
        with dc.no_grad():
            ldi = _finite(ldi_estimate(gen, self.policy, self.posterior), "directed-information bound")
        self.update_posterior(gen)
        expert = self.expert_batch()
        d_loss = self.update_discriminator(expert, gen)
        d_acc = disc_accuracy(expert, gen, self.policy, self.disc)
        streams = combined_return(gen, cfg.weights, self.policy, self.posterior, self.disc,
                                  cfg.reward_clip, sampled_entropy=cfg.sampled_entropy)
        if not np.isfinite(streams.total).all():
            raise NumericError(f"non-finite reward at episode {self.episode}")
        old_logp = np.concatenate([t.logp for t in trajs])
        policy_update(self.policy, self.value, gen, old_logp, streams.total, self.pol_opt,
                      self.val_opt, cfg, entropy_weight=cfg.weights.alpha1)
        returns = np.array([t.env_return for t in trajs])
        row = {"episode": self.episode, "env_return_mean": float(returns.mean()),
               "env_return_std": float(returns.std()), "ldi": ldi, "disc_loss": d_loss,
               "disc_acc": d_acc}
        for i, u in enumerate(option_usage(trajs, cfg.num_options)):
            row[f"option_usage_{i}"] = float(u)
        self.episode += 1
        return row

    def evaluate(self, episodes: int | None = None, seed: int | None = None,
                 greedy: bool | None = None) -> EvalResult:
        rng = np.random.default_rng([self.cfg.seed if seed is None else seed, 2])
        return evaluate(self.env, self.policy, episodes or self.cfg.eval_episodes, rng,
                        self.cfg.eval_greedy if greedy is None else greedy)

    # --- full run -----------------------------------------------------------
    def run(self, episodes: int | None = None, out_dir=None, callback=None) -> list[dict]:
        cfg = self.cfg
        n = cfg.episodes if episodes is None else episodes
        out = Path(out_dir) if out_dir is not None else None
        writer = fh = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
            fh = open(out / "metrics.csv", "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(metric_columns(cfg.num_options))
        rows = []
        try:
            for _ in range(n):
                row = self.train_episode()
                rows.append(row)
                if writer is not None:
                    writer.writerow([_fmt(row[c]) for c in metric_columns(cfg.num_options)])
                    fh.flush()
                    if cfg.checkpoint_interval and self.episode % cfg.checkpoint_interval == 0:
                        self.save(out / f"checkpoint_{self.episode:06d}.npz")
                if callback is not None and callback(self, row):
                    break
        finally:
            if fh is not None:
                fh.close()
        if out is not None:
            self.save(out / "checkpoint_final.npz")
            with open(out / "em.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["iteration", "episode", "em_bound"])
                for r in self.em_log:
                    w.writerow([r["iteration"], r["episode"], _fmt(r["em_bound"])])
        return rows

    # --- checkpoints --------------------------------------------------------
    def save(self, path) -> None:
        meta = {"config": self.cfg.to_dict(), "arch": self.policy.arch(),
                "episode": self.episode, "env": self.env.env_id}
        dc.save_params(path, {"policy": self.policy.params, "posterior": self.posterior.params,
                              "disc": self.disc.params, "value": self.value.params},
                       json.dumps(meta, sort_keys=True))

    def transfer_init(self, source) -> None:
        """Copy the low-level policy and the option context matrix from a checkpoint;
        everything else keeps its fresh initialization."""
        stores, meta = dc.load_params(source)
        arch = json.loads(meta)["arch"]
        mine = self.policy.arch()
        for key in ("num_options", "embed_dim", "state_dim", "action", "hidden"):
            if arch[key] != mine[key]:
                raise DimensionError(f"cannot transfer: {key} is {arch[key]} in the source "
                                     f"but {mine[key]} here")
        src = stores["policy"]
        keep = {k: v for k, v in src.items() if k == "context" or k.startswith("lo.")}
        for k, v in keep.items():
            self.policy.params[k].data = np.array(v, dtype=np.float64)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def load_policy(path) -> tuple[HierarchicalPolicy, dict]:
    """Rebuild the hierarchical policy stored in a checkpoint."""
    from .data import ActionSpec
    stores, meta = dc.load_params(path)
    meta = json.loads(meta)
    a = meta["arch"]
    policy = HierarchicalPolicy(a["state_dim"], ActionSpec(**a["action"]), a["num_options"],
                                a["embed_dim"], a["num_heads"], a["hidden"])
    policy.load_state_dict(stores["policy"])
    return policy, meta
