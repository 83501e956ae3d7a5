"""Exact computations on enumerable MDPs by listing every (trajectory, option) sequence.

A row of a :class:`JointTable` is one full sequence ``S_0, (Z_1, A_0, S_1), ...,
(Z_T, A_{T-1}, S_T)`` with ``Z_0`` fixed to the dummy option. Every quantity the
trainer only estimates (directed information, its variational bound, the
extended maximum-likelihood distribution and its partition function, the EM
bound) is computed here exactly, in nats, from the rows and their masses.

Policies enter as plain probability tables ``hi[s, z_prev, z]`` and
``lo[s, z, a]``; :func:`tabulate_policy` reads them off a network policy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .data import DUMMY_OPTION, one_hot
from .errors import SizeError

ENUMERATION_CAP = 10 ** 7


@dataclass
class JointTable:
    states: np.ndarray    # (R, T+1)
    actions: np.ndarray   # (R, T)
    options: np.ndarray   # (R, T+1); column 0 is the dummy option
    log_dyn: np.ndarray   # (R,) log mu(S_0) + sum_t log P(S_{t+1} | S_t, A_t)
    log_w: np.ndarray     # (R, T) per-step log weight (policy log-prob or reward)
    logp: np.ndarray      # (R,) normalized log-mass
    log_norm: float = 0.0  # log of the normalizer (0 for a policy table)
    num_options: int = 1

    @property
    def p(self) -> np.ndarray:
        return np.exp(self.logp)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return len(self.logp)


def check_size(num_states: int, num_actions: int, num_options: int, horizon: int,
               cap: int = ENUMERATION_CAP) -> int:
    size = (num_states * num_actions * num_options) ** horizon
    if size > cap:
        raise SizeError(f"enumeration needs {size} entries (cap {cap})")
    return size


def _enumerate(mdp, num_options: int, step_logw: np.ndarray, cap: int) -> tuple:
    """Expand all rows; ``step_logw[s, z_prev, z, a]`` is the per-step log weight."""
    nS, nA, N, T = mdp.num_states, mdp.num_actions, num_options, mdp.horizon
    check_size(nS, nA, N, T, cap)
    with np.errstate(divide="ignore"):
        log_mu, log_P = np.log(mdp.mu), np.log(mdp.P)
    S = np.arange(nS)[:, None]
    A = np.zeros((nS, 0), dtype=np.int64)
    Z = np.full((nS, 1), DUMMY_OPTION, dtype=np.int64)
    log_dyn = log_mu.copy()
    log_w = np.zeros((nS, 0))
    # one expansion per step over (z, a, s') in lexicographic order
    zz, aa, ss = (g.ravel() for g in np.meshgrid(np.arange(N), np.arange(nA), np.arange(nS),
                                                 indexing="ij"))
    k = len(zz)
    for _ in range(T):
        R = len(S)
        s, zp = np.repeat(S[:, -1], k), np.repeat(Z[:, -1], k)
        z, a, s2 = np.tile(zz, R), np.tile(aa, R), np.tile(ss, R)
        S = np.column_stack([np.repeat(S, k, axis=0), s2])
        A = np.column_stack([np.repeat(A, k, axis=0), a])
        Z = np.column_stack([np.repeat(Z, k, axis=0), z])
        log_dyn = np.repeat(log_dyn, k) + log_P[s, a, s2]
        log_w = np.column_stack([np.repeat(log_w, k, axis=0), step_logw[s, zp, z, a]])
    return S, A, Z, log_dyn, log_w


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def joint_distribution(mdp, hi: np.ndarray, lo: np.ndarray,
                       cap: int = ENUMERATION_CAP) -> JointTable:
    """``P(X, Z) = mu(S_0) prod_t hi(Z_{t+1}|S_t,Z_t) lo(A_t|S_t,Z_{t+1}) P(S_{t+1}|S_t,A_t)``."""
    hi, lo = np.asarray(hi, dtype=np.float64), np.asarray(lo, dtype=np.float64)
    N = hi.shape[1]
    step = _log(hi)[:, :, :, None] + _log(lo)[:, None, :, :]
    S, A, Z, log_dyn, log_w = _enumerate(mdp, N, step, cap)
    logp = log_dyn + log_w.sum(axis=1)
    return JointTable(S, A, Z, log_dyn, log_w, logp, 0.0, N)


def extended_mle_likelihood(mdp, reward: np.ndarray, cap: int = ENUMERATION_CAP) -> JointTable:
    """``P(X, Z) = mu prod P exp(sum_t R[S_t, Z_t, Z_{t+1}, A_t]) / Z_R`` with exact ``Z_R``."""
    reward = np.asarray(reward, dtype=np.float64)
    N = reward.shape[1]
    S, A, Z, log_dyn, log_w = _enumerate(mdp, N, reward, cap)
    unnorm = log_dyn + log_w.sum(axis=1)
    log_norm = float(logsumexp(unnorm))
    return JointTable(S, A, Z, log_dyn, log_w, unnorm - log_norm, log_norm, N)


# --- marginals and entropies -------------------------------------------------

def _keys(table: JointTable, x_upto: int | None, z_upto: int | None, z_at: int | None = None):
    """Key columns for ``X_{0:x_upto}`` and ``Z_{1:z_upto}`` (plus optionally ``Z_{z_at}``).

    ``X_t = (A_{t-1}, S_t)`` so ``X_{0:k}`` is ``S_0..S_k`` and ``A_0..A_{k-1}``.
    """
    cols = [np.zeros((len(table), 0), dtype=np.int64)]
    if x_upto is not None and x_upto >= 0:
        cols += [table.states[:, : x_upto + 1], table.actions[:, :x_upto]]
    if z_upto is not None and z_upto >= 1:
        cols.append(table.options[:, 1: z_upto + 1])
    if z_at is not None:
        cols.append(table.options[:, z_at: z_at + 1])
    return np.concatenate(cols, axis=1)


def _group(keys: np.ndarray):
    if keys.shape[1] == 0:
        return np.zeros(len(keys), dtype=np.int64), 1
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    return inv, int(inv.max()) + 1


def _entropy(table: JointTable, keys: np.ndarray) -> float:
    inv, n = _group(keys)
    m = np.bincount(inv, weights=table.p, minlength=n)
    m = m[m > 0]
    return float(-(m * np.log(m)).sum())


def cond_entropy(table: JointTable, x_upto, z_upto, t: int) -> float:
    """``H(Z_t | X_{0:x_upto}, Z_{1:z_upto})``."""
    ctx = _keys(table, x_upto, z_upto)
    both = _keys(table, x_upto, z_upto, z_at=t)
    return _entropy(table, both) - _entropy(table, ctx)


def directed_info_exact(table: JointTable) -> float:
    """``sum_{t=1..T} [H(Z_t | Z_{0:t-1}) - H(Z_t | X_{0:t}, Z_{0:t-1})]``."""
    return float(sum(cond_entropy(table, None, t - 1, t) - cond_entropy(table, t, t - 1, t)
                     for t in range(1, table.horizon + 1)))


def chain_bound(table: JointTable) -> float:
    """``sum_t [H(Z_t | X_{0:t-1}, Z_{0:t-1}) - H(Z_t | X_{0:t}, Z_{0:t-1})]``.

    The value of the variational bound when the posterior is exact; it sits below
    the directed information because extra conditioning cannot raise entropy.
    """
    return float(sum(cond_entropy(table, t - 1, t - 1, t) - cond_entropy(table, t, t - 1, t)
                     for t in range(1, table.horizon + 1)))


def exact_posterior(table: JointTable) -> np.ndarray:
    """``log P(Z_t | X_{0:t}, Z_{0:t-1})`` for every row and ``t = 1..T``, shape ``(R, T)``."""
    p = table.p
    out = np.zeros((len(table), table.horizon))
    for t in range(1, table.horizon + 1):
        num_inv, n1 = _group(_keys(table, t, t))
        den_inv, n0 = _group(_keys(table, t, t - 1))
        num = np.bincount(num_inv, weights=p, minlength=n1)[num_inv]
        den = np.bincount(den_inv, weights=p, minlength=n0)[den_inv]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[:, t - 1] = np.where(den > 0, np.log(num) - np.log(den), 0.0)
    return out


def random_posterior(table: JointTable, rng: np.random.Generator, scale: float = 2.0) -> np.ndarray:
    """A random but properly normalized ``log q(Z_t | X_{0:t}, Z_{0:t-1})``, shape ``(R, T)``."""
    N = table.num_options
    out = np.zeros((len(table), table.horizon))
    for t in range(1, table.horizon + 1):
        inv, n = _group(_keys(table, t, t - 1))
        logits = scale * rng.standard_normal((n, N))
        logq = logits - logsumexp(logits, axis=1, keepdims=True)
        out[:, t - 1] = logq[inv, table.options[:, t]]
    return out


def high_level_entropy_rows(table: JointTable, hi: np.ndarray) -> np.ndarray:
    """``H(hi(.|S_{t-1}, Z_{t-1}))`` per row and ``t = 1..T``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.where(hi > 0, hi * np.log(hi), 0.0).sum(axis=2)
    return H[table.states[:, :-1], table.options[:, :-1]]


def ldi_exact(table: JointTable, log_q: np.ndarray, hi: np.ndarray | None = None) -> float:
    """Exact ``sum_t E[H(pi_hi(.|S_{t-1}, Z_{t-1})) + log q(Z_t | X_{0:t}, Z_{0:t-1})]``.

    Without ``hi`` the entropy term is read off the table as
    ``H(Z_t | X_{0:t-1}, Z_{0:t-1})``, which is the same quantity.
    """
    p = table.p
    recon = float((p[:, None] * np.where(p[:, None] > 0, log_q, 0.0)).sum())
    if hi is not None:
        ent = float((p[:, None] * high_level_entropy_rows(table, hi)).sum())
    else:
        ent = sum(cond_entropy(table, t - 1, t - 1, t) for t in range(1, table.horizon + 1))
    return ent + recon


# --- network interop ---------------------------------------------------------

def tabulate_policy(policy, mdp) -> tuple[np.ndarray, np.ndarray]:
    """Read ``hi[s, z_prev, z]`` and ``lo[s, z, a]`` off a network policy."""
    nS, N = mdp.num_states, policy.num_options
    feats = mdp.features(np.arange(nS))
    hi = np.stack([policy.high_level_dist(feats, np.full(nS, z)) for z in range(N)], axis=1)
    lo = np.stack([policy.low_level_dist(feats, np.full(nS, z)) for z in range(N)], axis=1)
    return hi, lo


def tabulate_reward(disc, mdp) -> np.ndarray:
    """``f[s, z, z', a]`` read off a discriminator potential."""
    from . import diffcore as dc
    nS, nA, N = mdp.num_states, mdp.num_actions, disc.num_options
    s, z, z2, a = (g.ravel() for g in np.meshgrid(np.arange(nS), np.arange(N), np.arange(N),
                                                  np.arange(nA), indexing="ij"))
    with dc.no_grad():
        f = disc.f(mdp.features(s), z, z2, one_hot(a, nA)).data
    return f.reshape(nS, N, N, nA)


def observations(table: JointTable, mdp) -> np.ndarray:
    """``X_t = (onehot A_{t-1}, onehot S_t)`` per row, shape ``(R, T+1, |A| + |S|)``."""
    R, T1 = table.states.shape
    prev_a = np.zeros((R, T1, mdp.num_actions))
    prev_a[:, 1:] = one_hot(table.actions, mdp.num_actions)
    return np.concatenate([prev_a, one_hot(table.states, mdp.num_states)], axis=2)


def network_posterior(table: JointTable, posterior, mdp) -> np.ndarray:
    """``log P_omega(Z_t | X_{0:t}, Z_{0:t-1})`` for every row, shape ``(R, T)``."""
    from . import diffcore as dc
    with dc.no_grad():
        return posterior.step_log_probs(observations(table, mdp), table.options).data


# --- adversarial objective equivalence ---------------------------------------

def kl_equivalence_check(mdp, reward: np.ndarray, hi: np.ndarray, lo: np.ndarray,
                         cap: int = ENUMERATION_CAP) -> tuple[float, float]:
    """Return ``(E_pi[sum_t (f - log pi)], -KL(pi || P_f) + log Z_f)``.

    ``P_f`` is the extended maximum-likelihood distribution of the potential
    ``f``; the two numbers agree exactly because the dynamics cancel in the KL.
    """
    pol = joint_distribution(mdp, hi, lo, cap)
    mle = extended_mle_likelihood(mdp, reward, cap)
    p = pol.p
    live = p > 0
    f = mle.log_w
    lhs = float((p[live, None] * (f[live] - pol.log_w[live])).sum())
    kl = float((p[live] * (pol.logp[live] - mle.logp[live])).sum())
    return lhs, -kl + mle.log_norm


# --- EM bound ----------------------------------------------------------------

def _x_groups(table: JointTable):
    return _group(_keys(table, table.horizon, None))


def x_marginal(table: JointTable) -> np.ndarray:
    """Per-row mass of the row's full observation sequence ``X_{0:T}``."""
    inv, n = _x_groups(table)
    return np.bincount(inv, weights=table.p, minlength=n)[inv]


def exact_conditional(model: JointTable) -> np.ndarray:
    """``log P(Z_{1:T} | X_{0:T})`` per row."""
    inv, n = _x_groups(model)
    lx = np.full(n, -np.inf)
    np.logaddexp.at(lx, inv, model.logp)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(lx[inv]), model.logp - lx[inv], -np.inf)


def em_bound_check(data: JointTable, model: JointTable, log_q: np.ndarray) -> dict:
    """Compare ``E_X[log P(X)]`` with the Jensen bound under posterior ``q``.

    ``data`` supplies the observation distribution (its option columns are
    ignored), ``model`` is ``P_theta(X, Z)`` on the same rows, and ``log_q`` is
    the per-row ``log q(Z_{1:T} | X_{0:T})``. Also returns the expected KL from
    ``q`` to the exact conditional, which equals the gap.
    """
    inv, n = _x_groups(model)
    # each X appears once per option sequence; count its mass once
    px = np.bincount(inv, weights=data.p, minlength=n)
    lx = np.full(n, -np.inf)
    np.logaddexp.at(lx, inv, model.logp)
    live = px > 0
    marginal = float((px[live] * lx[live]).sum())
    q = np.exp(log_q)
    w = px[inv] * q
    use = w > 0
    bound = float((w[use] * (model.logp[use] - log_q[use])).sum())
    cond = model.logp - lx[inv]
    kl = float((w[use] * (log_q[use] - cond[use])).sum())
    return {"marginal": marginal, "bound": bound, "gap": marginal - bound, "kl": kl}


def _step_index(table: JointTable, N: int, nA: int) -> np.ndarray:
    s, z, z2, a = table.states[:, :-1], table.options[:, :-1], table.options[:, 1:], table.actions
    return ((s * N + z) * N + z2) * nA + a


def exact_em(mdp, data: JointTable, reward0: np.ndarray, iters: int = 10,
             cap: int = ENUMERATION_CAP) -> tuple[list[float], np.ndarray]:
    """Exact EM on a tabular potential ``R[s, z, z', a]``.

    E-step: ``q = P_{R_old}(Z | X)`` by enumeration. M-step: maximize
    ``E_{X, Z ~ q}[log P_R(X, Z)]`` over ``R`` with L-BFGS started at ``R_old``
    (the objective is concave; its gradient is data counts minus model counts).
    Returns the marginal log-likelihood before each iteration and after the last.
    """
    R = np.asarray(reward0, dtype=np.float64).copy()
    shape = R.shape
    N, nA = shape[1], shape[3]
    history = []
    model = extended_mle_likelihood(mdp, R, cap)
    idx = _step_index(model, N, nA)
    inv, n = _x_groups(model)
    px = np.bincount(inv, weights=data.p, minlength=n)
    for _ in range(iters):
        history.append(em_bound_check(data, model, exact_conditional(model))["marginal"])
        w = px[inv] * np.exp(exact_conditional(model))
        counts = np.bincount(idx.ravel(), weights=np.repeat(w, idx.shape[1]), minlength=R.size)
        total = w.sum()

        def neg_q(theta):
            unnorm = model.log_dyn + theta[idx].sum(axis=1)
            log_z = logsumexp(unnorm)
            pm = np.exp(unnorm - log_z)
            model_counts = np.bincount(idx.ravel(), weights=np.repeat(pm, idx.shape[1]),
                                       minlength=R.size)
            val = counts @ theta - total * log_z
            return -val, -(counts - total * model_counts)

        res = minimize(neg_q, R.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": 500, "gtol": 1e-10})
        if -res.fun >= -neg_q(R.ravel())[0]:
            R = res.x.reshape(shape)
        model = extended_mle_likelihood(mdp, R, cap)
    history.append(em_bound_check(data, model, exact_conditional(model))["marginal"])
    return history, R


# --- random instances --------------------------------------------------------

def random_tabular_policy(rng: np.random.Generator, num_states: int, num_options: int,
                          num_actions: int, concentration: float = 1.0):
    hi = rng.dirichlet(np.full(num_options, concentration), size=(num_states, num_options))
    lo = rng.dirichlet(np.full(num_actions, concentration), size=(num_states, num_options))
    return hi / hi.sum(axis=2, keepdims=True), lo / lo.sum(axis=2, keepdims=True)


def random_reward(rng: np.random.Generator, num_states: int, num_options: int,
                  num_actions: int, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((num_states, num_options, num_options, num_actions))


# --- verification suites (used by the CLI and the acceptance tests) ----------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)


def _random_instance(rng, max_states=4, max_actions=2, num_options=2, max_horizon=3):
    from .envs.enumerable import random_mdp
    nS = int(rng.integers(2, max_states + 1))
    nA = int(rng.integers(2, max_actions + 1))
    T = int(rng.integers(1, max_horizon + 1))
    mdp = random_mdp(rng, nS, nA, T)
    hi, lo = random_tabular_policy(rng, nS, num_options, nA)
    return mdp, hi, lo


def suite_bound(rng: np.random.Generator, instances: int = 20, posteriors: int = 5,
                tol: float = 1e-9) -> list[CheckResult]:
    """Variational bound never exceeds directed information; exact posterior attains the chain bound."""
    worst_excess, worst_tight = -np.inf, 0.0
    for _ in range(instances):
        mdp, hi, lo = _random_instance(rng)
        table = joint_distribution(mdp, hi, lo)
        di = directed_info_exact(table)
        for _ in range(posteriors):
            worst_excess = max(worst_excess, ldi_exact(table, random_posterior(table, rng), hi) - di)
        exact = ldi_exact(table, exact_posterior(table), hi)
        worst_excess = max(worst_excess, exact - di)
        worst_tight = max(worst_tight, abs(exact - chain_bound(table)))
    return [CheckResult("bound: ldi <= directed info", worst_excess <= tol,
                        f"max(ldi - I) = {worst_excess:.3e}"),
            CheckResult("bound: exact posterior attains chain bound", worst_tight < tol,
                        f"max gap = {worst_tight:.3e}")]


def mc_consistency(rng: np.random.Generator, rollouts: int = 100_000, seed: int = 0,
                   num_options: int = 2) -> dict:
    """Monte-Carlo bound estimate over policy rollouts versus its exact value."""
    from . import diffcore as dc
    from .envs import make_env
    from .objectives import ldi_per_trajectory
    from .option_policy import HierarchicalPolicy, rollout
    from .posterior import RecurrentPosterior
    mdp = make_env("enum-small")
    init = np.random.default_rng(seed)
    # a larger init scale gives clearly non-uniform policies and posteriors
    policy = HierarchicalPolicy(mdp.state_dim, mdp.action_spec, num_options, embed_dim=8,
                                hidden=(16,), rng=init, init_scale=3.0)
    post = RecurrentPosterior(mdp.state_dim, mdp.action_spec, num_options, hidden=16, embed=16,
                              rng=init, init_scale=2.0)
    hi, lo = tabulate_policy(policy, mdp)
    table = joint_distribution(mdp, hi, lo)
    exact = ldi_exact(table, network_posterior(table, post, mdp), hi)
    vals = []
    with dc.no_grad():
        for start in range(0, rollouts, 25_000):
            trajs = rollout(mdp, policy, rng, n=min(25_000, rollouts - start))
            vals.append(ldi_per_trajectory(trajs, policy, post).data)
    vals = np.concatenate(vals)
    est, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))
    return {"estimate": est, "exact": exact, "se": se, "z": abs(est - exact) / se}


def suite_mc(rng: np.random.Generator, rollouts: int = 100_000) -> list[CheckResult]:
    r = mc_consistency(rng, rollouts)
    return [CheckResult("mc: estimate within 3 SE of exact", r["z"] < 3.0,
                        f"estimate {r['estimate']:.5f} exact {r['exact']:.5f} se {r['se']:.2e}")]


def suite_kl(rng: np.random.Generator, triples: int = 100, tol: float = 1e-9) -> list[CheckResult]:
    worst = 0.0
    for _ in range(triples):
        mdp, hi, lo = _random_instance(rng)
        f = random_reward(rng, mdp.num_states, hi.shape[1], mdp.num_actions)
        lhs, rhs = kl_equivalence_check(mdp, f, hi, lo)
        worst = max(worst, abs(lhs - rhs))
    return [CheckResult("kl: imitation return == -KL + log Z", worst < tol, f"max |lhs - rhs| = {worst:.3e}")]


def suite_em(rng: np.random.Generator, triples: int = 100, tol: float = 1e-9,
             em_iters: int = 10) -> list[CheckResult]:
    worst_bound, worst_kl, worst_exact, min_pert_gap = -np.inf, 0.0, 0.0, np.inf
    for _ in range(triples):
        mdp, hi, lo = _random_instance(rng)
        data = joint_distribution(mdp, hi, lo)
        model = extended_mle_likelihood(mdp, random_reward(rng, mdp.num_states, 2, mdp.num_actions))
        log_q = random_posterior(model, rng).sum(axis=1)
        r = em_bound_check(data, model, log_q)
        worst_bound = max(worst_bound, r["bound"] - r["marginal"])
        worst_kl = max(worst_kl, abs(r["gap"] - r["kl"]))
        min_pert_gap = min(min_pert_gap, r["gap"])
        ex = em_bound_check(data, model, exact_conditional(model))
        worst_exact = max(worst_exact, abs(ex["gap"]))
    mdp, hi, lo = _random_instance(np.random.default_rng(1), max_states=3, max_horizon=2)
    data = joint_distribution(mdp, hi, lo)
    hist, _ = exact_em(mdp, data, random_reward(rng, mdp.num_states, 2, mdp.num_actions), em_iters)
    worst_drop = float(max(0.0, -np.diff(hist).min()))
    return [CheckResult("em: bound <= marginal", worst_bound <= tol, f"max(bound - ll) = {worst_bound:.3e}"),
            CheckResult("em: gap == E[KL]", worst_kl < tol, f"max |gap - KL| = {worst_kl:.3e}"),
            CheckResult("em: exact posterior is tight", worst_exact < tol, f"max gap = {worst_exact:.3e}"),
            CheckResult("em: perturbed posterior leaves a gap", min_pert_gap > 0, f"min gap = {min_pert_gap:.3e}"),
            CheckResult("em: exact EM is monotone", worst_drop <= tol,
                        f"log-lik {hist[0]:.6f} -> {hist[-1]:.6f}, worst drop {worst_drop:.3e}")]


def suite_factorization(rng: np.random.Generator, instances: int = 20,
                        tol: float = 1e-9) -> list[CheckResult]:
    worst_mass, worst_terms = 0.0, 0.0
    for _ in range(instances):
        mdp, hi, lo = _random_instance(rng)
        table = joint_distribution(mdp, hi, lo)
        worst_mass = max(worst_mass, abs(table.p.sum() - 1))
        # rebuild every row's log-mass term by term from the tables
        S, A, Z = table.states, table.actions, table.options
        lp = np.log(mdp.mu[S[:, 0]])
        for t in range(table.horizon):
            lp = lp + np.log(hi[S[:, t], Z[:, t], Z[:, t + 1]]) + np.log(lo[S[:, t], Z[:, t + 1], A[:, t]])
            lp = lp + np.log(mdp.P[S[:, t], A[:, t], S[:, t + 1]])
        worst_terms = max(worst_terms, float(np.abs(lp - table.logp).max()))
        f = random_reward(rng, mdp.num_states, 2, mdp.num_actions)
        mle = extended_mle_likelihood(mdp, f)
        worst_mass = max(worst_mass, abs(mle.p.sum() - 1))
        rebuilt = table.log_dyn + f[S[:, :-1], Z[:, :-1], Z[:, 1:], A].sum(axis=1) - mle.log_norm
        worst_terms = max(worst_terms, float(np.abs(rebuilt - mle.logp).max()))
    return [CheckResult("factorization: masses sum to one", worst_mass < tol, f"max |sum - 1| = {worst_mass:.3e}"),
            CheckResult("factorization: term-by-term products", worst_terms < tol,
                        f"max |log-mass error| = {worst_terms:.3e}")]


SUITES = {"bound": suite_bound, "mc": suite_mc, "kl": suite_kl, "em": suite_em,
          "factorization": suite_factorization}


def run_suites(name: str = "all", seed: int = 0) -> list[CheckResult]:
    if name != "all" and name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    names = list(SUITES) if name == "all" else [name]
    out = []
    for i, n in enumerate(names):
        out += SUITES[n](np.random.default_rng([seed, i]))
    return out
