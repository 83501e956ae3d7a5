"""Directed-information bound, extended AIRL discriminator, H-GAIL ablation, combined reward."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import diffcore as dc
from .data import ActionSpec, Batch, Trajectory, one_hot
from .diffcore import Tensor
from .option_policy import HierarchicalPolicy
from .posterior import RecurrentPosterior

BatchLike = Union[Batch, Sequence[Trajectory]]

MODES = ("h-airl", "option-airl", "h-gail")


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha1: float = 0.01  # directed-information term
    alpha2: float = 1.0   # imitation term

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("objective weights must be non-negative")


def as_batch(x: BatchLike, spec: ActionSpec) -> Batch:
    if isinstance(x, Batch):
        return x
    trajs = list(x)
    if not trajs:
        raise ValueError("empty batch")
    if any(t.options is None for t in trajs):
        raise ValueError("trajectories must carry option annotations")
    return Batch.from_trajectories(trajs, spec)


def _disc_input(S, Z, Znext, A_enc, num_options) -> np.ndarray:
    return np.concatenate([np.atleast_2d(S), one_hot(Z, num_options),
                           one_hot(Znext, num_options), np.atleast_2d(A_enc)], axis=1)


class AirlDiscriminator:
    """Potential ``f(S, Z, Z', A)`` inside ``D = exp f / (exp f + pi)``."""

    def __init__(self, state_dim: int, action_spec: ActionSpec, num_options: int,
                 hidden: Sequence[int] = (64, 64), rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_options = num_options
        self.action_spec = action_spec
        self.params = dc.ParamStore()
        in_dim = state_dim + 2 * num_options + action_spec.encoded_dim
        self.net = dc.MLP(self.params, "f", (in_dim, *hidden, 1), rng, init_scale)

    def f(self, S, Z, Znext, A_enc) -> Tensor:
        x = _disc_input(S, Z, Znext, A_enc, self.num_options)
        return self.net(x).reshape(-1)


class GailDiscriminator:
    """Classifier logit for ``D_psi(S, A, Z', Z)``; experts are the 0 class."""

    def __init__(self, state_dim: int, action_spec: ActionSpec, num_options: int,
                 hidden: Sequence[int] = (64, 64), rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_options = num_options
        self.action_spec = action_spec
        self.params = dc.ParamStore()
        in_dim = state_dim + 2 * num_options + action_spec.encoded_dim
        self.net = dc.MLP(self.params, "d", (in_dim, *hidden, 1), rng, init_scale)

    def logit(self, S, Z, Znext, A_enc) -> Tensor:
        x = _disc_input(S, Z, Znext, A_enc, self.num_options)
        return self.net(x).reshape(-1)


# --- AIRL discriminator ------------------------------------------------------

def airl_log_d(f, log_pi):
    """``(log D, log(1 - D))`` for ``D = e^f / (e^f + pi)``, computed in log space."""
    f = dc.as_tensor(f)
    lse = dc.logaddexp(f, dc.as_tensor(log_pi))
    return f - lse, dc.as_tensor(log_pi) - lse


def disc_prob(S, Z, Znext, A, policy: HierarchicalPolicy, disc: AirlDiscriminator) -> np.ndarray:
    with dc.no_grad():
        log_pi = policy.joint_log_prob(S, Z, Znext, A).data
        f = disc.f(S, Z, Znext, policy.action_spec.encode(A)).data
    return np.exp(f - np.logaddexp(f, log_pi))


def reward_il(S, Z, Znext, A, policy: HierarchicalPolicy, disc: AirlDiscriminator) -> np.ndarray:
    """``log D - log(1 - D)``, evaluated as the identical ``f - log pi``."""
    with dc.no_grad():
        log_pi = policy.joint_log_prob(S, Z, Znext, A).data
        f = disc.f(S, Z, Znext, policy.action_spec.encode(A)).data
    return f - log_pi


def _airl_side(batch: Batch, policy, disc):
    S, Z, Zn, A, A_enc = batch.steps()
    with dc.no_grad():
        log_pi = policy.joint_log_prob(S, Z, Zn, A).data
    return airl_log_d(disc.f(S, Z, Zn, A_enc), log_pi)


def disc_loss(expert: BatchLike, generated: BatchLike, policy: HierarchicalPolicy,
              disc: AirlDiscriminator) -> Tensor:
    """``-E_expert[sum_t log D] - E_policy[sum_t log(1 - D)]``.

    The policy density inside ``D`` is treated as a constant.
    """
    eb, gb = as_batch(expert, policy.action_spec), as_batch(generated, policy.action_spec)
    log_d, _ = _airl_side(eb, policy, disc)
    _, log_1md = _airl_side(gb, policy, disc)
    return -log_d.sum() / eb.size - log_1md.sum() / gb.size


def disc_accuracy(expert: BatchLike, generated: BatchLike, policy, disc) -> float:
    eb, gb = as_batch(expert, policy.action_spec), as_batch(generated, policy.action_spec)
    with dc.no_grad():
        if isinstance(disc, GailDiscriminator):
            le = disc.logit(*_gail_args(eb)).data
            lg = disc.logit(*_gail_args(gb)).data
            hits = np.concatenate([le < 0, lg > 0])
        else:
            de, _ = _airl_side(eb, policy, disc)
            dg, _ = _airl_side(gb, policy, disc)
            hits = np.concatenate([de.data > np.log(0.5), dg.data < np.log(0.5)])
    return float(hits.mean())


# --- H-GAIL ablation ---------------------------------------------------------

def _gail_args(batch: Batch):
    S, Z, Zn, _, A_enc = batch.steps()
    return S, Z, Zn, A_enc


def hgail_disc_loss(expert: BatchLike, generated: BatchLike, disc: GailDiscriminator,
                    action_spec: ActionSpec) -> Tensor:
    """``-E_expert[sum_t log(1 - D)] - E_policy[sum_t log D]`` with ``D = sigmoid(logit)``."""
    eb, gb = as_batch(expert, action_spec), as_batch(generated, action_spec)
    le = disc.logit(*_gail_args(eb))
    lg = disc.logit(*_gail_args(gb))
    return dc.softplus(le).sum() / eb.size + dc.softplus(-lg).sum() / gb.size


def hgail_reward(S, Z, Znext, A_enc, disc: GailDiscriminator) -> np.ndarray:
    """Per-step ``-log D_psi``."""
    with dc.no_grad():
        lg = disc.logit(S, Z, Znext, A_enc).data
    return np.logaddexp(0.0, -lg)


# --- directed information ----------------------------------------------------

def ldi_terms(batch: BatchLike, policy: HierarchicalPolicy, posterior: RecurrentPosterior):
    """Masked ``(B, L)`` tensors: high-level entropy at ``(S_t, Z_t)`` and
    ``log P_omega(Z_{t+1} | X_{0:t+1}, Z_{0:t})``."""
    b = as_batch(batch, policy.action_spec)
    B, L = b.mask.shape
    m = b.mask.astype(float)
    if L == 0:
        zero = dc.Tensor(np.zeros((B, 0)))
        return zero, zero
    S = b.states[:, :L].reshape(B * L, -1)
    Z = b.options[:, :L].reshape(-1)
    ent = policy.high_level_entropy(S, Z).reshape(B, L) * m
    logq = posterior.batch_log_probs(b)
    return ent, logq


def _sampled_entropy(b: Batch, policy: HierarchicalPolicy) -> Tensor:
    B, L = b.mask.shape
    out = np.zeros((B, L))
    if L:
        bi, ti = b.step_index()
        S, Z, Zn, _, _ = b.steps()
        logp = policy.high_level_log_probs(S, Z).data
        out[bi, ti] = -logp[np.arange(len(Zn)), Zn]
    return Tensor(out)


def ldi_per_trajectory(batch: BatchLike, policy, posterior) -> Tensor:
    ent, logq = ldi_terms(batch, policy, posterior)
    return (ent + logq).sum(axis=1)


def ldi_estimate(batch: BatchLike, policy: HierarchicalPolicy,
                 posterior: RecurrentPosterior) -> Tensor:
    """Monte-Carlo estimate of the directed-information lower bound (mean over the batch)."""
    return ldi_per_trajectory(batch, policy, posterior).mean()


# --- combined reward ---------------------------------------------------------

@dataclass
class RewardStreams:
    total: np.ndarray   # (B, L)
    di: np.ndarray      # (B, L) entropy + posterior log-prob
    il: np.ndarray      # (B, L) imitation reward


def imitation_rewards(batch: Batch, policy, disc, reward_clip: float | None = 20.0) -> np.ndarray:
    B, L = batch.mask.shape
    bi, ti = batch.step_index()
    S, Z, Zn, A, A_enc = batch.steps()
    out = np.zeros((B, L))
    if isinstance(disc, GailDiscriminator):
        r = hgail_reward(S, Z, Zn, A_enc, disc)
    else:
        r = reward_il(S, Z, Zn, A, policy, disc)
        if reward_clip is not None:
            r = np.clip(r, -reward_clip, reward_clip)
    out[bi, ti] = r
    return out


def combined_return(batch: BatchLike, weights: ObjectiveWeights, policy: HierarchicalPolicy,
                    posterior: RecurrentPosterior, disc,
                    reward_clip: float | None = 20.0,
                    sampled_entropy: bool = False) -> RewardStreams:
    """Per-step ``alpha1 * (H + log P_omega) + alpha2 * R_IL``.

    The step from ``S_t`` to ``S_{t+1}`` earns the bound term for ``Z_{t+1}`` and
    the imitation term for ``(S_t, Z_t, Z_{t+1}, A_t)``.  With ``sampled_entropy``
    the entropy ``H`` is replaced by its single-sample estimate
    ``-log pi_theta(Z_{t+1} | S_t, Z_t)``: same expectation, but the reward then
    depends on which option was drawn, which is what lets the policy gradient
    see the entropy term at all.
    """
    b = as_batch(batch, policy.action_spec)
    with dc.no_grad():
        ent, logq = ldi_terms(b, policy, posterior)
        if sampled_entropy:
            ent = _sampled_entropy(b, policy)
    di = ent.data + logq.data
    il = imitation_rewards(b, policy, disc, reward_clip)
    total = (weights.alpha1 * di + weights.alpha2 * il) * b.mask
    return RewardStreams(total, di, il)
