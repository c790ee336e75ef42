"""Birth-death chains over network color splits, and their absorption math.

The scheduler model admits a one-dimensional projection: the number ``i`` of
correct nodes preferring red fully determines the distribution of the next
state, because each round picks one correct node uniformly and its sample
outcome depends only on the current split.  That makes the protocol a
birth-death chain on states ``s_0 .. s_c`` with absorbing endpoints: one step
moves at most one node.

For Slush on ``c`` correct nodes the transition probabilities are

    up(i)   = ((c - i)/c) * P(H(pop, i,     k) >= a)   (a blue node flips red)
    down(i) = (i/c)       * P(H(pop, c - i, k) >= a)   (a red node flips blue)

and the Snowflake variant adds ``b`` Byzantine nodes that always vote for the
direction opposing progress, so the down-move support gains ``+b`` while the
population grows to ``n = c + b``.  The ``population`` override exists because
two sampling conventions are in use: the analysis equations sample from the
whole population (``pop = n``), while a simulator node samples the *other*
nodes (``pop = n - 1``); restricted views (a subnetwork smaller than the whole
system) are the same override.  Supports are unchanged in either case.

Absorption probabilities use the classic product-sum over down/up ratios,
evaluated in log space because the ratios span hundreds of orders of
magnitude; chains with a vanishing interior transition fall back to a
tridiagonal linear solve.  Expected absorption times always use the
tridiagonal solve (scipy's banded solver), keeping ``c = 10^4`` tractable; no
dense matrix is ever formed outside the test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from snowsim.sampling import _tail_raw

__all__ = [
    "BirthDeathChain",
    "build_slush_chain",
    "build_snowflake_chain",
    "absorption_probability",
    "expected_absorption_time",
    "hitting_prob_within",
    "hitting_profile",
    "ever_hit_probability",
]

# Exact t-step iteration is used while t * (active states) stays below this;
# beyond it, ever-hit is the conservative limit. ~1 second of numpy work.
_EXACT_CELL_LIMIT = 50_000_000


@dataclass(frozen=True, eq=False)
class BirthDeathChain:
    """States 0..c with per-state up/down probabilities; endpoints absorbing.

    ``stay`` is implicit: 1 - up - down.  Instances are immutable; the arrays
    are owned by the chain and must not be written to.
    """

    up: np.ndarray
    down: np.ndarray

    def __post_init__(self) -> None:
        up, down = np.asarray(self.up, float), np.asarray(self.down, float)
        if up.shape != down.shape or up.ndim != 1 or up.size < 2:
            raise ValueError("up/down must be equal-length 1-d arrays over states 0..c")
        for edge in (0, -1):
            if up[edge] != 0.0 or down[edge] != 0.0:
                raise ValueError("endpoints must be absorbing (up = down = 0)")
        if (up < 0).any() or (down < 0).any() or (up + down > 1 + 1e-12).any():
            raise ValueError("need 0 <= up, down and up + down <= 1 per state")
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "down", down)
        up.setflags(write=False)
        down.setflags(write=False)

    @property
    def c(self) -> int:
        """The state count basis: states run 0..c inclusive."""
        return self.up.size - 1


def build_slush_chain(c: int, k: int, a: int, population: int | None = None) -> BirthDeathChain:
    """The Slush chain over ``c`` correct nodes (no Byzantine mass)."""
    return build_snowflake_chain(c, 0, k, a, population=population)


def build_snowflake_chain(
    c: int, b: int, k: int, a: int, population: int | None = None
) -> BirthDeathChain:
    """The Snowflake chain: ``b`` Byzantine nodes always aid the opposing move.

    ``population`` defaults to ``c + b``; pass ``c + b - 1`` for the
    self-exclusion sampling convention or a smaller value for restricted
    views.  Supports (``i`` up, ``c - i + b`` down) are unchanged.
    """
    if c < 2:
        raise ValueError(f"need at least 2 correct nodes, got c={c}")
    if b < 0:
        raise ValueError(f"b={b} must be non-negative")
    n = c + b if population is None else population
    if not 1 <= k <= n:
        raise ValueError(f"sample size k={k} outside [1, {n}]")
    if not k // 2 < a <= k:
        raise ValueError(f"threshold a={a} violates floor(k/2) < a <= k")
    if c - 1 + b > n:
        raise ValueError(f"population {n} cannot hold the largest support {c - 1 + b}")
    up = np.zeros(c + 1)
    down = np.zeros(c + 1)
    for i in range(1, c):
        up[i] = ((c - i) / c) * _tail_raw(n, i, k, a)
        down[i] = (i / c) * _tail_raw(n, c - i + b, k, a)
    return BirthDeathChain(up=up, down=down)


def _log_rho(chain: BirthDeathChain) -> np.ndarray:
    """log of rho_j = prod_{l=1..j} down_l/up_l for j = 0..c-1."""
    up, down = chain.up, chain.down
    ratios = np.log(down[1 : chain.c]) - np.log(up[1 : chain.c])
    return np.concatenate([[0.0], np.cumsum(ratios)])


def absorption_probability(chain: BirthDeathChain, start: int) -> float:
    """P(the chain started at ``start`` is absorbed at state 0).

    Product-sum formula h(i) = sum_{j>=i} rho_j / sum_j rho_j with
    rho_j = prod down/up, computed in log space.  Chains with a zero interior
    transition (where a ratio is degenerate) use the tridiagonal solve
    instead.
    """
    c = chain.c
    if not 0 <= start <= c:
        raise ValueError(f"start={start} outside states 0..{c}")
    if start == 0:
        return 1.0
    if start == c:
        return 0.0
    interior_up, interior_down = chain.up[1:c], chain.down[1:c]
    if (interior_up == 0).any() or (interior_down == 0).any():
        return float(_absorption_solve(chain)[start])
    logr = _log_rho(chain)
    num = logsumexp(logr[start:])
    den = logsumexp(logr)
    return float(np.exp(num - den))


def _absorption_solve(chain: BirthDeathChain) -> np.ndarray:
    """h over all states via the banded solve; handles zero transitions.

    Interior equation: up_i h(i+1) - (up_i + down_i) h(i) + down_i h(i-1) = 0
    with h(0) = 1, h(c) = 0.  A frozen interior state (up = down = 0) never
    reaches 0, so its equation becomes h(i) = 0.
    """
    c = chain.c
    up, down = chain.up.copy(), chain.down.copy()
    diag = -(up + down)
    frozen = (up == 0) & (down == 0)
    frozen[0] = frozen[c] = False
    diag[[0, c]] = 1.0
    diag[frozen] = 1.0
    up[frozen] = 0.0
    down[frozen] = 0.0
    rhs = np.zeros(c + 1)
    rhs[0] = 1.0
    ab = np.zeros((3, c + 1))
    ab[0, 1:] = up[:-1]  # superdiagonal: up_i multiplies h(i+1)
    ab[1, :] = diag
    ab[2, :-1] = down[1:]  # subdiagonal: down_i multiplies h(i-1)
    ab[0, 1] = 0.0  # boundary rows carry no neighbors
    ab[2, c - 1] = 0.0
    return solve_banded((1, 1), ab, rhs)


def expected_absorption_time(chain: BirthDeathChain, start: int) -> float:
    """Expected per-node iterations until absorption from ``start``.

    Solves u(i) = 1 + down_i u(i-1) + stay_i u(i) + up_i u(i+1) with
    u(0) = u(c) = 0 (a tridiagonal system) and divides the resulting
    scheduler-step count by c, since each scheduler round advances one of the
    c nodes.  Chains with unreachable absorption raise a domain error.
    """
    c = chain.c
    if not 0 <= start <= c:
        raise ValueError(f"start={start} outside states 0..{c}")
    if start in (0, c):
        return 0.0
    up, down = chain.up, chain.down
    if ((up[1:c] == 0) & (down[1:c] == 0)).any():
        raise ValueError("chain has a frozen interior state; absorption time is infinite")
    diag = -(up + down)
    diag_full = diag.copy()
    diag_full[[0, c]] = 1.0
    rhs = np.zeros(c + 1)
    rhs[1:c] = -1.0
    ab = np.zeros((3, c + 1))
    ab[0, 1:] = up[:-1]
    ab[1, :] = diag_full
    ab[2, :-1] = down[1:]
    ab[0, 1] = 0.0
    ab[2, c - 1] = 0.0
    steps = solve_banded((1, 1), ab, rhs)
    value = float(steps[start])
    if not np.isfinite(value) or value < 0:
        raise ValueError("absorption time solve failed; chain may be ill-conditioned")
    return value / c


def hitting_profile(chain: BirthDeathChain, target: int, t: int) -> np.ndarray:
    """P(hit ``target`` within ``t`` steps) for every start in [target, c].

    One pass of the iterated transition operator yields the whole profile, so
    parameter searches evaluate all candidate starts at the cost of one.
    Entries for states below ``target`` are not meaningful and returned as 1
    (a birth-death path from above cannot pass ``target`` without hitting it).
    """
    c = chain.c
    if not 0 <= target < c:
        raise ValueError(f"target={target} must lie in [0, c)")
    if t < 0:
        raise ValueError("t must be non-negative")
    up, down = chain.up, chain.down
    f = np.zeros(c + 1)
    f[: target + 1] = 1.0  # reaching the target region counts as hit
    lo = target + 1
    stay = 1.0 - up - down
    for _ in range(t):
        nxt = f.copy()
        nxt[lo:c] = down[lo:c] * f[lo - 1 : c - 1] + stay[lo:c] * f[lo:c] + up[lo:c] * f[lo + 1 : c + 1]
        # state c is absorbing on the far side: f[c] stays 0 unless target==c.
        f = nxt
    return f


def hitting_prob_within(chain: BirthDeathChain, start: int, target: int, t: int) -> float:
    """P(reach ``target`` from ``start`` within ``t`` steps), target absorbing.

    Exact while the iteration budget t*(c - target) is affordable; beyond
    that the closed-form probability of EVER hitting the target (the t -> inf
    limit) is returned, which can only overestimate: safety conclusions drawn
    from it are conservative.
    """
    c = chain.c
    if not (0 <= target < start <= c):
        raise ValueError(f"need 0 <= target < start <= c; got start={start}, target={target}")
    if t < 1:
        raise ValueError("t must be >= 1")
    if t < start - target:
        return 0.0  # not enough +-1 transitions to bridge the gap
    if t * (c - target) > _EXACT_CELL_LIMIT:
        return ever_hit_probability(chain, start, target)
    return float(hitting_profile(chain, target, t)[start])


def ever_hit_probability(chain: BirthDeathChain, start: int, target: int) -> float:
    """P(hit ``target`` before absorbing at c), the infinite-horizon limit.

    Gambler's-ruin product-sum on the restricted chain [target, c], in log
    space.  Requires strictly positive interior transitions on that range.
    """
    c = chain.c
    if not (0 <= target < start <= c):
        raise ValueError(f"need 0 <= target < start <= c; got start={start}, target={target}")
    if start == c:
        return 0.0
    up, down = chain.up, chain.down
    if (up[target + 1 : c] == 0).any() or (down[target + 1 : c] == 0).any():
        raise ValueError("ever-hit product form needs nonzero interior transitions")
    ratios = np.log(down[target + 1 : c]) - np.log(up[target + 1 : c])
    logr = np.concatenate([[0.0], np.cumsum(ratios)])  # rho_j for j = target..c-1
    num = logsumexp(logr[start - target :])
    den = logsumexp(logr)
    return float(np.exp(num - den))
