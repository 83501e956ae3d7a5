"""Recurrent variational posterior over option sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .data import DUMMY_OPTION, ActionSpec, Batch, one_hot
from .diffcore import Tensor
from .errors import DimensionError


@dataclass
class PosteriorState:
    h: Tensor
    t: int = 0


class RecurrentPosterior:
    """``P_omega(Z_t | X_t, Z_{t-1}, h_{t-1})`` with a GRU carrying the history.

    ``X_t = (A_{t-1}, S_t)`` is embedded by one linear layer. The hidden state
    starts at zero; the step at ``t = 0`` consumes ``X_0`` (with a zero vector in
    place of the nonexistent ``Z_{-1}``) and its emission is discarded because
    ``Z_0`` is a constant.
    """

    def __init__(self, state_dim: int, action_spec: ActionSpec, num_options: int,
                 hidden: int = 64, embed: int = 64, rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_spec = action_spec
        self.num_options = num_options
        self.hidden = hidden
        self.embed = embed
        x_dim = action_spec.encoded_dim + state_dim
        self.x_dim = x_dim
        N, H = num_options, hidden
        gin = embed + N
        u = dc.uniform_init
        p = self.params = dc.ParamStore()
        p.add("embed.W", u(rng, (x_dim, embed), x_dim, init_scale))
        p.add("embed.b", u(rng, (embed,), x_dim, init_scale))
        p.add("gru.Wx", u(rng, (gin, 3 * H), gin, init_scale))
        p.add("gru.U_ru", u(rng, (H, 2 * H), H, init_scale))
        p.add("gru.U_c", u(rng, (H, H), H, init_scale))
        p.add("gru.b", u(rng, (3 * H,), gin, init_scale))
        hin = embed + N + H
        p.add("head.W", u(rng, (hin, N), hin, init_scale))
        p.add("head.b", u(rng, (N,), hin, init_scale))

    def initial_state(self, batch: int = 1) -> PosteriorState:
        return PosteriorState(Tensor(np.zeros((batch, self.hidden))), 0)

    def posterior_step(self, state: PosteriorState, x_t, z_prev_onehot):
        """Logits of ``P(Z_t | X_t, Z_{t-1}, h_{t-1})`` and the advanced state."""
        p = self.params
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        if x_t.shape[1] != self.x_dim:
            raise DimensionError(f"observation width {x_t.shape[1]} != {self.x_dim}")
        zp = Tensor(np.atleast_2d(z_prev_onehot))
        e = dc.linear(x_t, p["embed.W"], p["embed.b"])
        logits = dc.linear(dc.concat([e, zp, state.h], axis=1), p["head.W"], p["head.b"])
        h = dc.gru_cell(dc.concat([e, zp], axis=1), state.h,
                        p["gru.Wx"], p["gru.U_ru"], p["gru.U_c"], p["gru.b"])
        return logits, PosteriorState(h, state.t + 1)

    def _run(self, X: np.ndarray, Z: np.ndarray) -> list[Tensor]:
        """Per-step log-prob rows; element ``t-1`` holds ``log P(.|X_{0:t}, Z_{0:t-1})``."""
        B, L1, _ = X.shape
        N = self.num_options
        state = self.initial_state(B)
        _, state = self.posterior_step(state, X[:, 0], np.zeros((B, N)))
        out = []
        for t in range(1, L1):
            logits, state = self.posterior_step(state, X[:, t], one_hot(Z[:, t - 1], N))
            out.append(dc.log_softmax(logits))
        return out

    def step_log_probs(self, X: np.ndarray, Z: np.ndarray) -> Tensor:
        """``log P_omega(Z_t | X_{0:t}, Z_{0:t-1})`` for ``t = 1..L``, shape ``(B, L)``."""
        X = np.asarray(X, dtype=np.float64)
        Z = np.asarray(Z, dtype=np.int64)
        if X.ndim == 2:
            X, Z = X[None], Z[None]
        if X.shape[:2] != Z.shape:
            raise ValueError("X and Z sequences must have equal length")
        rows = self._run(X, Z)
        if not rows:
            return Tensor(np.zeros((X.shape[0], 0)))
        picked = [dc.pick(lp, Z[:, t + 1]) for t, lp in enumerate(rows)]
        return dc.stack(picked, axis=1)

    def sequence_log_prob(self, X, Z, mask=None) -> Tensor:
        """``sum_{t=1..L} log P_omega(Z_t | X_{0:t}, Z_{0:t-1})`` per sequence."""
        lp = self.step_log_probs(X, Z)
        if mask is not None:
            lp = lp * np.asarray(mask, dtype=np.float64)
        return lp.sum(axis=1)

    def batch_log_probs(self, batch: Batch) -> Tensor:
        """Masked ``(B, L)`` step log-probs for a padded batch."""
        return self.step_log_probs(batch.observations(), batch.options) * batch.mask.astype(float)

    def e_step_sample(self, X, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
        """Sample ``Z_{0:L}`` sequentially, feeding each draw forward; ``Z_0`` is the dummy."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        B, L1, _ = X.shape
        N = self.num_options
        Z = np.full((B, L1), DUMMY_OPTION, dtype=np.int64)
        with dc.no_grad():
            state = self.initial_state(B)
            _, state = self.posterior_step(state, X[:, 0], np.zeros((B, N)))
            for t in range(1, L1):
                logits, state = self.posterior_step(state, X[:, t], one_hot(Z[:, t - 1], N))
                lg = logits.data - logits.data.max(axis=1, keepdims=True)
                probs = np.exp(lg)
                probs /= probs.sum(axis=1, keepdims=True)
                if greedy:
                    Z[:, t] = probs.argmax(axis=1)
                else:
                    u = rng.random(B)
                    Z[:, t] = np.minimum((np.cumsum(probs, axis=1) <= u[:, None]).sum(axis=1), N - 1)
        return Z[0] if single else Z

    def state_dict(self):
        return self.params.state_dict()

    def load_state_dict(self, state, strict=True):
        self.params.load_state_dict(state, strict)
