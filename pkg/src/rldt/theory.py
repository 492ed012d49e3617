"""Executable checks of the return-conditioning analysis.

Enumerable MDPs give exact return-to-go distributions; on top of those the
module verifies the conditional-policy Bayes identity, the concentration
bound for returns above the data's value function, the quadratic growth of
the inverse return-coverage, and the Laplace-ratio connection to
advantage-weighted updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class CapacityError(Exception):
    """Enumeration would exceed the path budget."""


MAX_PATHS = 10 ** 6


@dataclass
class EnumerableMDP:
    """Finite MDP with tabular behavior policy and deterministic rewards.

    reward_bound is the environment's reward range R_max (a property of the
    environment, not of realized rewards); it defaults to the largest table
    entry.
    """

    transitions: np.ndarray  # (S, A, S) row-stochastic in the last axis
    rewards: np.ndarray      # (S, A)
    initial: np.ndarray      # (S,)
    behavior: np.ndarray     # (S, A)
    horizon: int
    reward_bound: float | None = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.behavior = np.asarray(self.behavior, dtype=np.float64)
        s, a, s2 = self.transitions.shape
        if s != s2 or self.rewards.shape != (s, a) or self.behavior.shape != (s, a):
            raise ValueError("inconsistent table shapes")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.abs(self.transitions.sum(axis=2) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if np.abs(self.behavior.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("behavior rows must sum to 1")
        if abs(self.initial.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if self.reward_bound is None:
            self.reward_bound = float(self.rewards.max())

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def enumerate_paths(self):
        """Yield (prob, s1, a1, rtg) over all length-H trajectories under
        the behavior policy; exact probabilities, float rtg accumulated in
        step order."""
        n_paths = (self.n_states * self.n_actions) ** self.horizon
        if n_paths > MAX_PATHS:
            raise CapacityError(f"{n_paths} paths exceed the budget {MAX_PATHS}")
        stack = [(float(self.initial[s]), s, None, 0.0, 0)
                 for s in range(self.n_states) if self.initial[s] > 0.0]
        while stack:
            prob, s, a1, rtg, depth = stack.pop()
            if depth == self.horizon:
                yield prob, None, a1, rtg
                continue
            for a in range(self.n_actions):
                pa = self.behavior[s, a]
                if pa == 0.0:
                    continue
                r = self.rewards[s, a]
                for s2 in range(self.n_states):
                    ps = self.transitions[s, a, s2]
                    if ps == 0.0:
                        continue
                    stack.append((prob * pa * ps, s2,
                                  a if a1 is None else a1, rtg + r, depth + 1))

    def first_states(self):
        return [s for s in range((self.n_states)) if self.initial[s] > 0.0]


@dataclass
class RtgDistribution:
    """Atomic RTG distributions keyed by initial state (and first action)."""

    by_state: dict[int, dict[float, float]]
    by_state_action: dict[tuple[int, int], dict[float, float]]
    n_samples: int

    def support(self, s: int):
        return sorted(self.by_state[s])

    def value(self, s: int) -> float:
        return sum(g * p for g, p in self.by_state[s].items())

    def variance(self, s: int) -> float:
        v = self.value(s)
        return sum(p * (g - v) ** 2 for g, p in self.by_state[s].items())

    def max_rtg(self) -> float:
        return max(g for d in self.by_state.values() for g in d)

    def tail(self, s: int, threshold: float) -> float:
        """Pr(RTG >= threshold | s)."""
        return sum(p for g, p in self.by_state[s].items() if g >= threshold)


def exact_rtg_distribution(mdp: EnumerableMDP) -> RtgDistribution:
    """Brute-force enumeration of P(RTG | s1) and P(RTG | s1, a1)."""
    by_s: dict[int, dict[float, float]] = {s: {} for s in mdp.first_states()}
    by_sa: dict[tuple[int, int], dict[float, float]] = {}
    sub = _enumerate_from_states(mdp)
    for (s, a), dist in sub.items():
        by_sa[(s, a)] = dict(dist)
        for g, p in dist.items():
            w = mdp.behavior[s, a] * p
            by_s[s][g] = by_s[s].get(g, 0.0) + w
    return RtgDistribution(by_s, by_sa, n_samples=0)


def _enumerate_from_states(mdp: EnumerableMDP) -> dict[tuple[int, int], dict[float, float]]:
    """P(RTG | s1, a1) for every positive-probability (s1, a1)."""
    out: dict[tuple[int, int], dict[float, float]] = {}
    for s in mdp.first_states():
        for a in range(mdp.n_actions):
            if mdp.behavior[s, a] == 0.0:
                continue
            dist: dict[float, float] = {}
            stack = [(1.0, s, a, 0.0, 0, True)]
            while stack:
                prob, st, act, rtg, depth, forced = stack.pop()
                if depth == mdp.horizon:
                    dist[rtg] = dist.get(rtg, 0.0) + prob
                    continue
                actions = [act] if forced else range(mdp.n_actions)
                for a2 in actions:
                    pa = 1.0 if forced else mdp.behavior[st, a2]
                    if pa == 0.0:
                        continue
                    r = mdp.rewards[st, a2]
                    for s2 in range(mdp.n_states):
                        ps = mdp.transitions[st, a2, s2]
                        if ps == 0.0:
                            continue
                        stack.append((prob * pa * ps, s2, a2, rtg + r,
                                      depth + 1, False))
            out[(s, a)] = dist
    return out


def conditional_first_action(mdp: EnumerableMDP, s: int, rtg: float) -> dict[int, float]:
    """pi(a | s1, RTG) from the trajectory definition: among full paths
    from s with exactly this float RTG, the share starting with action a."""
    sub = _enumerate_from_states(mdp)
    num: dict[int, float] = {}
    den = 0.0
    for a in range(mdp.n_actions):
        pa = mdp.behavior[s, a]
        if pa == 0.0:
            continue
        mass = sub[(s, a)].get(rtg, 0.0) * pa
        if mass > 0.0:
            num[a] = mass
        den += mass
    if den == 0.0:
        raise ValueError(f"RTG {rtg} has zero probability at state {s}")
    return {a: m / den for a, m in num.items()}


def bayes_identity_residual(mdp: EnumerableMDP, rtg: float) -> float:
    """max |pi(a|s,RTG) - beta(a|s) P(RTG|s,a) / P(RTG|s)| over initial
    states where the conditioning probability is positive."""
    res = _bayes_residuals(mdp, only_rtg=rtg)
    if not res:
        raise ValueError(f"RTG {rtg} unsupported at every initial state")
    return max(res.values())


def _bayes_residuals(mdp: EnumerableMDP, only_rtg: float | None = None) -> dict:
    """Residuals keyed by (state, rtg); the two sides come from differently
    grouped sums over the same enumeration."""
    dist = exact_rtg_distribution(mdp)
    out: dict[tuple[int, float], float] = {}
    for s in mdp.first_states():
        for g, p_s in dist.by_state[s].items():
            if only_rtg is not None and g != only_rtg:
                continue
            if p_s == 0.0:
                continue
            lhs = conditional_first_action(mdp, s, g)
            worst = 0.0
            for a in range(mdp.n_actions):
                beta = mdp.behavior[s, a]
                p_sa = dist.by_state_action.get((s, a), {}).get(g, 0.0) if beta else 0.0
                rhs = beta * p_sa / p_s
                worst = max(worst, abs(lhs.get(a, 0.0) - rhs))
            out[(s, g)] = worst
    return out


# ---------------------------------------------------------------------------
# bounds


def chebyshev_tail(var: float, c: float) -> float:
    """min(1, var / c^2)."""
    if c <= 0.0:
        raise ValueError("c must be positive")
    if var < 0.0:
        raise ValueError("variance must be nonnegative")
    return min(1.0, var / (c * c))


def lemma1_bound(rtg_betamax: float, r_max: float, horizon: int, eps: float,
                 v_beta: float, c: float, squared_variant: bool = False) -> float:
    """Concentration bound on Pr(RTG - V >= c) for shifted rewards.

    Literal form: ((1-eps) RTG_betamax + eps R_max^2 T^2 - V^2) / c^2,
    capped at 1.  The squared variant replaces the first term with
    RTG_betamax^2, the dimensionally consistent second moment bound.
    """
    if c <= 0.0:
        raise ValueError("c must be positive")
    first = rtg_betamax ** 2 if squared_variant else rtg_betamax
    num = (1.0 - eps) * first + eps * (r_max ** 2) * (horizon ** 2) - v_beta ** 2
    return min(1.0, num / (c * c))


def beta_posterior_delta(n: int, eps: float) -> float:
    """delta = 1 - CDF_{Beta(n+1,1)}(eps) = 1 - eps^(n+1)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    return 1.0 - eps ** (n + 1)


def alpha_f_estimate(dist: RtgDistribution, rtg_eval: float) -> float:
    """Return coverage: infimum over initial states of the probability mass
    the behavior distribution puts exactly on rtg_eval."""
    return min(d.get(rtg_eval, 0.0) for d in dist.by_state.values())


def performance_gap_bound(eps: float, alpha_f: float, horizon: int) -> float:
    """eps (1/alpha_f + 2) H^2; infinite when the coverage is zero."""
    if alpha_f < 0.0:
        raise ValueError("alpha_f must be nonnegative")
    if alpha_f == 0.0:
        return math.inf
    return eps * (1.0 / alpha_f + 2.0) * horizon ** 2


@dataclass
class SuperlinearityRow:
    c: Fraction
    inv_alpha_lower_bound: Fraction


def superlinearity_probe(dist: RtgDistribution, s: int, c_grid) -> list[SuperlinearityRow]:
    """Chebyshev-implied lower bounds c^2 / var on 1/alpha_f at RTG = V + c.

    Exact rational arithmetic so the quadratic scaling bound(2c) = 4 bound(c)
    holds identically.
    """
    atoms = {Fraction(g): Fraction(p) for g, p in dist.by_state[s].items()}
    v = sum(g * p for g, p in atoms.items())
    var = sum(p * (g - v) ** 2 for g, p in atoms.items())
    if var == 0:
        raise ValueError("degenerate distribution: variance is zero")
    rows = []
    for c in c_grid:
        cf = Fraction(c)
        if cf <= 0:
            raise ValueError("grid values must be positive")
        rows.append(SuperlinearityRow(cf, cf * cf / var))
    return rows


def exact_inv_alpha(dist: RtgDistribution, s: int, rtg: float) -> Fraction:
    p = dist.by_state[s].get(rtg, 0.0)
    if p == 0.0:
        raise ValueError("RTG not in the support")
    return 1 / Fraction(p)


def awac_ratio_check(q: float, v: float, sigma: float, rtg: float):
    """Laplace density ratio at rtg (locations q and v, common scale) versus
    exp((q - v) / sigma), computed in log space.  Requires rtg >= max(q, v).
    Returns (lhs, rhs, abs difference)."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if rtg < max(q, v):
        raise ValueError("rtg must be at least max(q, v)")
    log_lhs = (abs(rtg - v) - abs(rtg - q)) / sigma
    lhs = math.exp(log_lhs)
    rhs = math.exp((q - v) / sigma)
    return lhs, rhs, abs(lhs - rhs)


def lipschitz_tail_lower_bound(p0: float, lipschitz: float) -> float:
    """Tail mass guaranteed to the right of a point with density p0 under a
    Lipschitz density: the right triangle p0^2 / (2 K)."""
    if p0 < 0.0 or lipschitz <= 0.0:
        raise ValueError("need p0 >= 0 and a positive Lipschitz constant")
    return p0 * p0 / (2.0 * lipschitz)


def _lemma1_margin(atoms: dict[float, float], gmax: float, r_max: float,
                   horizon: int, eps: float, squared: bool,
                   n_grid: int = 20) -> tuple[bool, float]:
    """Exact-rational check of tail <= bound over a grid of c values.

    Returns (all hold, worst float margin tail - bound).
    """
    fatoms = {Fraction(g): Fraction(p) for g, p in atoms.items()}
    v = sum(g * p for g, p in fatoms.items())
    feps = Fraction(eps)
    fg = Fraction(gmax)
    first = fg * fg if squared else fg
    num = (1 - feps) * first + feps * Fraction(r_max) ** 2 * horizon ** 2 - v * v
    c_hi = max(fg - v, Fraction(1, 20)) + Fraction(1, 2)
    ok = True
    worst = Fraction(-10 ** 9)
    for i in range(1, n_grid + 1):
        c = Fraction(1, 20) + (c_hi - Fraction(1, 20)) * (i - 1) / (n_grid - 1)
        tail = sum(p for g, p in fatoms.items() if g - v >= c)
        bound = min(Fraction(1), num / (c * c))
        ok &= tail <= bound
        worst = max(worst, tail - bound)
    return ok, float(worst)


# ---------------------------------------------------------------------------
# seeded MDP suite and the empirical bandit distribution


def random_mdp(seed: int, max_states: int = 4, max_actions: int = 3,
               max_horizon: int = 3, reward_cap: float | None = None) -> EnumerableMDP:
    """Seeded random enumerable MDP.

    Rewards are scaled so the maximum possible return stays at most 1,
    which keeps the literal concentration bound valid after shifting.
    """
    rng = np.random.default_rng(seed)
    s = int(rng.integers(1, max_states + 1))
    a = int(rng.integers(1, max_actions + 1))
    h = int(rng.integers(1, max_horizon + 1))
    trans = rng.dirichlet(np.ones(s), size=(s, a))
    if rng.random() < 0.3:  # make some rows deterministic
        det = rng.integers(0, s, size=(s, a))
        trans = np.zeros((s, a, s))
        for i in range(s):
            for j in range(a):
                trans[i, j, det[i, j]] = 1.0
    cap = reward_cap if reward_cap is not None else 1.0 / h
    rewards = rng.uniform(0.0, cap, size=(s, a))
    beta = rng.dirichlet(np.ones(a), size=s)
    initial = rng.dirichlet(np.ones(s))
    return EnumerableMDP(trans, rewards, initial, beta, h, reward_bound=cap)


def empirical_rtg_distribution(dataset) -> RtgDistribution:
    """Single-initial-state empirical distribution of dataset returns."""
    returns = [float(t.rtg[0]) for t in dataset.trajectories]
    n = len(returns)
    atoms: dict[float, float] = {}
    for g in returns:
        atoms[g] = atoms.get(g, 0.0) + 1.0 / n
    return RtgDistribution({0: atoms}, {}, n_samples=n)


# ---------------------------------------------------------------------------
# report


@dataclass
class TheoryCheck:
    name: str
    bound: float
    empirical: float
    passed: bool
    note: str = ""


@dataclass
class TheoryReport:
    checks: list[TheoryCheck] = field(default_factory=list)
    reward_offset: dict[str, float] = field(default_factory=dict)

    def add(self, name, bound, empirical, passed, note=""):
        self.checks.append(TheoryCheck(name, float(bound), float(empirical),
                                       bool(passed), note))

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write(self, path):
        with open(path, "w") as f:
            f.write("check,bound,empirical,status,note\n")
            for env, off in sorted(self.reward_offset.items()):
                f.write(f"reward_offset[{env}],{off!r},,info,\n")
            for c in self.checks:
                status = "pass" if c.passed else "FAIL"
                f.write(f"{c.name},{c.bound!r},{c.empirical!r},{status},{c.note}\n")


def run_theory_suite(n_mdps: int = 24, seed0: int = 100,
                     bandit_seed: int = 0) -> TheoryReport:
    """Every check on the seeded MDP suite plus the bandit dataset."""
    from .envs import bandit_dataset

    report = TheoryReport()
    eps = 0.05
    rng = np.random.default_rng(7)

    worst_residual = 0.0
    for i in range(n_mdps):
        mdp = random_mdp(seed0 + i)
        res = _bayes_residuals(mdp)
        worst_residual = max(worst_residual, max(res.values()))
    report.add("bayes_identity_max_residual", 1e-9, worst_residual,
               worst_residual < 1e-9, f"{n_mdps} seeded MDPs, all supported RTGs")

    # concentration: exact tails against both bound variants, shifted
    # rewards; evaluated in rational arithmetic so validity is exact
    worst_lit = -math.inf
    worst_sq = -math.inf
    lit_ok = sq_ok = True
    for i in range(n_mdps):
        mdp = random_mdp(seed0 + i)
        dist = exact_rtg_distribution(mdp)
        gmax = dist.max_rtg()
        r_max = mdp.reward_bound
        for s in mdp.first_states():
            lo, lsl = _lemma1_margin(dist.by_state[s], gmax, r_max,
                                     mdp.horizon, eps, squared=False)
            so, ssl = _lemma1_margin(dist.by_state[s], gmax, r_max,
                                     mdp.horizon, eps, squared=True)
            lit_ok &= lo
            sq_ok &= so
            worst_lit = max(worst_lit, lsl)
            worst_sq = max(worst_sq, ssl)
    report.add("lemma1_literal_suite", 0.0, worst_lit, lit_ok,
               "max(tail - bound); valid iff <= 0")
    report.add("lemma1_squared_suite", 0.0, worst_sq, sq_ok,
               "max(tail - bound); valid iff <= 0")

    # bandit dataset, rewards shifted by +1 into [0, 2]
    ds = bandit_dataset(bandit_seed)
    offset = -(-1.0)  # reward_min of the bandit
    report.reward_offset["bandit"] = offset
    shifted = {g + offset: p for g, p in
               empirical_rtg_distribution(ds).by_state[0].items()}
    lit_ok, worst_lit = _lemma1_margin(shifted, max(shifted), 2.0, 1, eps,
                                       squared=False)
    sq_ok_b, worst_sq_b = _lemma1_margin(shifted, max(shifted), 2.0, 1, eps,
                                         squared=True)
    report.add("lemma1_literal_bandit", 0.0, worst_lit, lit_ok,
               "max(tail - bound); valid iff <= 0")
    report.add("lemma1_squared_bandit", 0.0, worst_sq_b, sq_ok_b,
               "max(tail - bound); valid iff <= 0")

    # superlinearity: quadratic ratio exact, and exact 1/alpha dominates
    ratio_ok = True
    dominate_ok = True
    for i in range(n_mdps):
        mdp = random_mdp(seed0 + i)
        dist = exact_rtg_distribution(mdp)
        for s in mdp.first_states():
            if dist.variance(s) == 0.0:
                continue
            grid = [0.1, 0.2, 0.4, 0.8]
            rows = superlinearity_probe(dist, s, grid)
            for a, b in zip(rows[:-1], rows[1:]):
                if b.c == 2 * a.c:
                    ratio_ok &= (b.inv_alpha_lower_bound
                                 == 4 * a.inv_alpha_lower_bound)
            v = dist.value(s)
            var = Fraction(dist.variance(s))
            for g, p in dist.by_state[s].items():
                if g > v and p > 0.0:
                    cf = Fraction(g) - Fraction(v)
                    dominate_ok &= 1 / Fraction(p) >= cf * cf / var
    bexact = empirical_rtg_distribution(ds)
    vb = bexact.value(0)
    varb = Fraction(bexact.variance(0))
    for g, p in bexact.by_state[0].items():
        if g > vb and p > 0.0:
            cf = Fraction(g) - Fraction(vb)
            dominate_ok &= 1 / Fraction(p) >= cf * cf / varb
    report.add("superlinearity_quadratic_ratio", 1.0, 1.0 if ratio_ok else 0.0,
               ratio_ok, "bound(2c) == 4 bound(c), exact rationals")
    report.add("superlinearity_inv_alpha_dominates", 1.0,
               1.0 if dominate_ok else 0.0, dominate_ok,
               "1/alpha >= c^2/var at every supported atom above V")

    # AWAC ratio lemma over random precondition-satisfying tuples; moderate
    # (q - v)/sigma keeps the exponential ratio where an absolute tolerance
    # is meaningful
    worst = 0.0
    for _ in range(1000):
        q = rng.uniform(-2.0, 2.0)
        v = rng.uniform(-2.0, 2.0)
        sigma = rng.uniform(0.5, 3.0)
        rtg = max(q, v) + rng.uniform(0.0, 10.0)
        _, _, diff = awac_ratio_check(q, v, sigma, rtg)
        worst = max(worst, diff)
    report.add("awac_ratio_max_diff", 1e-10, worst, worst < 1e-10,
               "1000 random tuples, |q - v|/sigma <= 8")

    # posterior tail monotone in eps
    grid = np.linspace(0.05, 0.95, 19)
    deltas = [beta_posterior_delta(9, e) for e in grid]
    mono = all(b < a for a, b in zip(deltas[:-1], deltas[1:]))
    report.add("beta_posterior_monotone", 1.0, 1.0 if mono else 0.0, mono,
               "delta decreasing on an eps grid, n=9")

    # alpha_f on the concealed bandit data at the evaluation target
    af = alpha_f_estimate(empirical_rtg_distribution(ds), 1.0)
    gap = performance_gap_bound(eps, af, 1)
    report.add("bandit_alpha_f_at_target", 0.0, af, af == 0.0,
               "target return unsupported in the concealed dataset")
    report.add("bandit_gap_bound_infinite", math.inf, gap, math.isinf(gap),
               "zero coverage yields the infinite-bound signal")

    # Lipschitz-density geometric step: exact triangle integrals
    tri_ok = True
    for p0, k in ((0.5, 1.0), (0.2, 0.5), (1.0, 4.0)):
        exact = p0 * p0 / (2.0 * k)  # right-triangle density integral
        tri_ok &= exact >= lipschitz_tail_lower_bound(p0, k) - 1e-15
    report.add("lipschitz_tail_triangle", 1.0, 1.0 if tri_ok else 0.0, tri_ok,
               "triangle densities meet the p0^2/2K bound")
    return report
