"""One-step option policy: attention-based high level, MLP low level."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .data import DUMMY_OPTION, ActionSpec, Trajectory
from .diffcore import Tensor
from .errors import DimensionError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)


def attention(q, K, V) -> Tensor:
    """Softmax(q . k_i)-weighted sum of the rows of ``V`` (no temperature)."""
    q, K, V = dc.as_tensor(q), dc.as_tensor(K), dc.as_tensor(V)
    if K.shape[0] == 0:
        raise DimensionError("attention needs at least one key")
    if K.shape[0] != V.shape[0] or q.shape[-1] != K.shape[-1]:
        raise DimensionError("attention shape mismatch")
    single = q.ndim == 1
    if single:
        q = q.reshape(1, -1)
    out = dc.softmax(q @ K.T) @ V
    return out.reshape(-1) if single else out


def mha(q, K, V, heads: Sequence[tuple], W_O) -> Tensor:
    """``Concat(head_1..head_h) W_O`` with ``head_i = attention(q Wq_i, K Wk_i, V Wv_i)``."""
    q = dc.as_tensor(q)
    single = q.ndim == 1
    if single:
        q = q.reshape(1, -1)
    outs = [attention(q @ Wq, dc.matmul(K, Wk), dc.matmul(V, Wv)) for Wq, Wk, Wv in heads]
    W_O = dc.as_tensor(W_O)
    if W_O.shape[0] != sum(o.shape[-1] for o in outs):
        raise DimensionError("output projection does not match concatenated heads")
    out = dc.concat(outs, axis=-1) @ W_O
    return out.reshape(-1) if single else out


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


class HierarchicalPolicy:
    """High-level ``pi_theta(Z | S, Z')`` and low-level ``pi_phi(A | S, Z)``.

    Both levels read option ``i`` through row ``i`` of the shared context matrix.
    The high level attends over the context rows with a query built from the
    state and the previous option's context; option scores are the inner product
    of the attention output with each context row. The context matrix is trained
    only through the high level unless ``context_grad_from_low`` is set.
    """

    def __init__(self, state_dim: int, action_spec: ActionSpec, num_options: int,
                 embed_dim: int = 16, num_heads: int = 2, hidden: Sequence[int] = (64, 64),
                 rng: np.random.Generator | None = None, init_scale: float = 1.0,
                 context_grad_from_low: bool = False, context_scale: float | None = None,
                 low_init_scale: float | None = None):
        if num_options < 1 or num_heads < 1:
            raise ValueError("need at least one option and one head")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_spec = action_spec
        self.num_options = num_options
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.hidden = tuple(hidden)
        self.context_grad_from_low = context_grad_from_low
        E = embed_dim
        p = self.params = dc.ParamStore()
        cs = init_scale if context_scale is None else context_scale
        p.add("context", dc.uniform_init(rng, (num_options, E), E, cs))
        p.add("hi.query.W", dc.uniform_init(rng, (state_dim + E, E), state_dim + E, init_scale))
        p.add("hi.query.b", dc.uniform_init(rng, (E,), state_dim + E, init_scale))
        for i in range(num_heads):
            for m in ("Wq", "Wk", "Wv"):
                p.add(f"hi.head{i}.{m}", dc.uniform_init(rng, (E, E), E, init_scale))
        p.add("hi.out.W", dc.uniform_init(rng, (num_heads * E, E), num_heads * E, init_scale))
        out_dim = action_spec.size
        ls = init_scale if low_init_scale is None else low_init_scale
        self.low = dc.MLP(p, "lo", (state_dim + E, *self.hidden, out_dim), rng, ls)
        if not action_spec.discrete:
            p.add("lo.log_std", np.zeros(out_dim))

    # --- parameter groups -------------------------------------------------
    def high_level_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("hi.")]

    def low_level_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("lo.")]

    # --- high level -------------------------------------------------------
    def _heads(self):
        p = self.params
        return [(p[f"hi.head{i}.Wq"], p[f"hi.head{i}.Wk"], p[f"hi.head{i}.Wv"])
                for i in range(self.num_heads)]

    def high_level_logits(self, S, z_prev) -> Tensor:
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if S.shape[1] != self.state_dim:
            raise DimensionError(f"state width {S.shape[1]} != {self.state_dim}")
        z_prev = np.broadcast_to(np.asarray(z_prev, dtype=np.int64), (S.shape[0],))
        p = self.params
        W_C = p["context"]
        q = dc.linear(dc.concat([Tensor(S), W_C[z_prev]], axis=1), p["hi.query.W"], p["hi.query.b"])
        dense = mha(q, W_C, W_C, self._heads(), p["hi.out.W"])
        return dense @ W_C.T

    def high_level_log_probs(self, S, z_prev) -> Tensor:
        return dc.log_softmax(self.high_level_logits(S, z_prev))

    def high_level_dist(self, S, z_prev) -> np.ndarray:
        """Categorical probabilities over the next option, shape ``(B, N)``."""
        with dc.no_grad():
            return np.exp(self.high_level_log_probs(S, z_prev).data)

    def high_level_entropy(self, S, z_prev) -> Tensor:
        return dc.categorical_entropy(self.high_level_logits(S, z_prev))

    # --- low level --------------------------------------------------------
    def _context_rows(self, z) -> Tensor:
        W_C = self.params["context"]
        if self.context_grad_from_low:
            return W_C[z]
        return Tensor(W_C.data[z])

    def low_level_head(self, S, z) -> Tensor:
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        z = np.broadcast_to(np.asarray(z, dtype=np.int64), (S.shape[0],))
        return self.low(dc.concat([Tensor(S), self._context_rows(z)], axis=1))

    def log_std(self) -> Tensor:
        return dc.clip(self.params["lo.log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def low_level_log_prob(self, S, z, A) -> Tensor:
        head = self.low_level_head(S, z)
        if self.action_spec.discrete:
            return dc.pick(dc.log_softmax(head), np.atleast_1d(np.asarray(A, dtype=np.int64)))
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        log_std = self.log_std()
        zscore = (Tensor(A) - head) * dc.exp(-log_std)
        d = self.action_spec.size
        return -0.5 * (zscore * zscore).sum(axis=1) - log_std.sum() - 0.5 * d * _LOG_2PI

    def low_level_dist(self, S, z):
        """Action probabilities ``(B, |A|)``, or ``(mean, std)`` for continuous actions."""
        with dc.no_grad():
            head = self.low_level_head(S, z)
            if self.action_spec.discrete:
                return np.exp(dc.log_softmax(head).data)
            std = np.exp(self.log_std().data)
            return head.data, np.broadcast_to(std, head.shape).copy()

    # --- composed ---------------------------------------------------------
    def joint_log_prob(self, S, z_prev, z, A) -> Tensor:
        """``log pi_theta(z | S, z_prev) + log pi_phi(A | S, z)``."""
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        hi = dc.pick(self.high_level_log_probs(S, z_prev), z)
        return hi + self.low_level_log_prob(S, z, A)

    def act(self, S, z_prev, rng: np.random.Generator, greedy: bool = False):
        """Sample ``Z ~ pi_theta(.|S, z_prev)`` then ``A ~ pi_phi(.|S, Z)``."""
        S = np.atleast_2d(S)
        with dc.no_grad():
            hi_lp = self.high_level_log_probs(S, z_prev).data
            z = hi_lp.argmax(axis=1) if greedy else _sample_categorical(np.exp(hi_lp), rng)
            head = self.low_level_head(S, z).data
            rows = np.arange(len(z))
            if self.action_spec.discrete:
                lo_lp = head - head.max(axis=1, keepdims=True)
                lo_lp = lo_lp - np.log(np.exp(lo_lp).sum(axis=1, keepdims=True))
                a = lo_lp.argmax(axis=1) if greedy else _sample_categorical(np.exp(lo_lp), rng)
                lp = hi_lp[rows, z] + lo_lp[rows, a]
            else:
                log_std = np.clip(self.params["lo.log_std"].data, LOG_STD_MIN, LOG_STD_MAX)
                eps = np.zeros_like(head) if greedy else rng.standard_normal(head.shape)
                a = head + np.exp(log_std) * eps
                lp = (hi_lp[rows, z] - 0.5 * (eps * eps).sum(axis=1) - log_std.sum()
                      - 0.5 * head.shape[1] * _LOG_2PI)
        return z, a, lp

    def state_dict(self):
        return self.params.state_dict()

    def load_state_dict(self, state, strict=True):
        self.params.load_state_dict(state, strict)

    def arch(self) -> dict:
        return {"state_dim": self.state_dim, "action": self.action_spec.to_dict(),
                "num_options": self.num_options, "embed_dim": self.embed_dim,
                "num_heads": self.num_heads, "hidden": list(self.hidden)}


def rollout(env, policy: HierarchicalPolicy, rng: np.random.Generator, n: int = 1,
            horizon: int | None = None, greedy: bool = False) -> list[Trajectory]:
    """Run ``n`` episodes in lockstep.

    At each step ``Z_{t+1} ~ pi_theta(.|S_t, Z_t)``, ``A_t ~ pi_phi(.|S_t, Z_{t+1})``.
    Episodes that reach a terminal state are cut at that step.
    """
    T = horizon if horizon is not None else env.horizon
    raw = env.reset(n, rng)
    feats = env.features(raw)
    z = np.full(n, DUMMY_OPTION, dtype=np.int64)
    S, Z, A, R, LP = [feats], [z], [], [], []
    length = np.full(n, T, dtype=np.int64)
    done_any = np.zeros(n, dtype=bool)
    for t in range(T):
        z, a, lp = policy.act(feats, z, rng, greedy=greedy)
        raw, r, done = env.step(raw, a, rng)
        feats = env.features(raw)
        S.append(feats)
        Z.append(z)
        A.append(a)
        R.append(r)
        LP.append(lp)
        newly = done & ~done_any
        length[newly] = t + 1
        done_any |= done
        if done_any.all():
            break
    S, Z, A, R, LP = (np.stack(x, axis=1) for x in (S, Z, A, R, LP))
    trajs = []
    for i in range(n):
        L = int(length[i])
        trajs.append(Trajectory(S[i, : L + 1], A[i, :L], Z[i, : L + 1], R[i, :L], LP[i, :L],
                                terminated=bool(done_any[i])))
    return trajs


def option_divergence(policy: HierarchicalPolicy, S) -> float:
    """Mean pairwise Jensen-Shannon divergence (nats) between the low-level action
    distributions of different options, averaged over the given states."""
    if not policy.action_spec.discrete:
        raise ValueError("option divergence is defined for discrete actions only")
    S = np.atleast_2d(S)
    P = np.stack([policy.low_level_dist(S, np.full(len(S), z)) for z in range(policy.num_options)])
    N = policy.num_options
    if N < 2:
        return 0.0
    tot, pairs = 0.0, 0
    for i in range(N):
        for j in range(i + 1, N):
            tot += float(jensen_shannon(P[i], P[j]).mean())
            pairs += 1
    return tot / pairs


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise JSD in nats."""
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0).sum(axis=-1)
        kl_qm = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0).sum(axis=-1)
    return 0.5 * (kl_pm + kl_qm)
