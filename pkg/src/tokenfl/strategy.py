"""Client decision policy and the brute-force equilibrium oracle.

Clients commit to one privacy budget for the whole run. The rational
commitment under the strategic mechanism is eps_a: participation is
rewarded with exactly the model price there, while lower budgets earn
too little to stay solvent and higher budgets pay more privacy cost for
the same tokens. nash_check verifies that claim by exhaustively pricing
every single-client deviation onto a grid of budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .economy import FreshnessPolicy, InsufficientTokens, TokenLedger, model_age
from .mechanisms import MechanismParams, cost, reward, utility, value

__all__ = [
    "ClientState",
    "choose_epsilon",
    "decide_participation",
    "client_round_payoff",
    "Deviation",
    "NashReport",
    "nash_check",
]


@dataclass
class ClientState:
    """Strategic state of one client, as the game sees it."""

    id: int
    chosen_eps: float
    owned_model_round: int = 0
    evicted: bool = False
    cumulative_payoff: float = 0.0


def choose_epsilon(params: MechanismParams, override=None) -> float:
    """The budget a rational client commits to: eps_a, unless overridden.

    Overrides exist for experiments that pin all clients to some other
    level; they must stay inside [eps_min, eps_max].
    """
    if override is None:
        return float(params.eps_a)
    if not params.eps_min <= override <= params.eps_max:
        raise ValueError(
            f"eps override {override} outside [{params.eps_min}, {params.eps_max}]"
        )
    return float(override)


def decide_participation(client: ClientState, t: int, stride: int,
                         params: MechanismParams) -> bool:
    """Whether a client is willing to train at round t.

    True exactly when the round utility is nonnegative. Utility falls
    with t once the value curve flattens, so after the first refusal a
    client never returns.
    """
    if client.evicted:
        raise ValueError(f"client {client.id} is evicted and makes no decisions")
    return utility(t, client.chosen_eps, stride, params) >= 0.0


def client_round_payoff(bought: bool, value_gain: float, eps: float,
                        participated: bool, params: MechanismParams) -> float:
    """Real-currency payoff of one round.

    Value is realized only when a model is bought; privacy cost is borne
    only when the client actually trained. Tokens never enter the
    payoff, they are plumbing that gates access to the model.
    """
    if value_gain < 0:
        raise ValueError(f"value_gain must be >= 0, got {value_gain}")
    gain = value_gain if bought else 0.0
    spent = cost(eps, params) if participated else 0.0
    return gain - spent


@dataclass(frozen=True)
class Deviation:
    """Outcome of one client unilaterally switching to another budget."""

    client: int
    eps: float
    payoff: float
    delta: float
    participated_rounds: int
    profitable: bool


@dataclass
class NashReport:
    profile: tuple
    horizon: int
    profile_payoffs: tuple
    deviations: list = field(default_factory=list)

    @property
    def profitable_deviations(self):
        return [d for d in self.deviations if d.profitable]

    @property
    def is_nash(self) -> bool:
        return not self.profitable_deviations

    def to_dict(self) -> dict:
        return {
            "profile": list(self.profile),
            "horizon": self.horizon,
            "profile_payoffs": list(self.profile_payoffs),
            "is_nash": self.is_nash,
            "deviations": [
                {
                    "client": d.client,
                    "eps": d.eps,
                    "payoff": d.payoff,
                    "delta": d.delta,
                    "participated_rounds": d.participated_rounds,
                    "profitable": d.profitable,
                }
                for d in self.deviations
            ],
        }


def _trajectory(eps: float, horizon: int, params: MechanismParams):
    """Cumulative payoff of one client playing `eps` for `horizon` rounds.

    Runs the token dynamics analytically: the shared value curve is
    insensitive to any single client's noise level, so one client's
    ledger can be simulated in isolation. Participation follows the
    mechanism schedule while the client remains solvent and fresh; the
    strategy space of the game is the budget alone, so deviators comply
    with the schedule and differ only in what they earn and what their
    privacy costs. Returns (payoff, participated_round_count).
    """
    policy = FreshnessPolicy(n=params.n)
    ledger = TokenLedger()
    owned = 0
    payoff = 0.0
    participated = 0
    for t in range(1, horizon + 1):
        ledger.expire(t, policy)
        age = model_age(owned, t, policy)
        if age > policy.n and ledger.balance < params.C:
            break
        bought = False
        gain = 0.0
        trained = age <= policy.n
        if trained:
            ledger.record_participation(t)
            ledger.credit(reward(eps, params), t)
            participated += 1
        if (trained and (t + 1) - owned > policy.n) or (not trained):
            try:
                ledger.spend(params.C, t)
                bought = True
                gain = value(t) - value(owned)
                owned = t
            except InsufficientTokens:
                pass
        payoff += client_round_payoff(bought, gain, eps, trained, params)
    return payoff, participated


def nash_check(profile, eps_grid, horizon: int, params: MechanismParams) -> NashReport:
    """Brute-force unilateral-deviation scan over a budget grid.

    For every client and every grid budget different from its profile
    budget, prices the deviation trajectory against the client's profile
    trajectory and reports each comparison; a deviation is profitable
    when its payoff strictly exceeds the profile payoff. The all-eps_a
    profile must come back with zero profitable deviations.
    """
    profile = tuple(float(e) for e in profile)
    grid = sorted(float(e) for e in eps_grid)
    if not grid:
        raise ValueError("eps grid must be nonempty")
    for e in grid:
        if not params.eps_min <= e <= params.eps_max:
            raise ValueError(
                f"grid eps {e} outside [{params.eps_min}, {params.eps_max}]"
            )
    if params.eps_a not in grid or grid[0] >= params.eps_a or grid[-1] <= params.eps_a:
        raise ValueError("grid must contain eps_a and at least one value on each side")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")

    cache: dict = {}

    def priced(eps):
        if eps not in cache:
            cache[eps] = _trajectory(eps, horizon, params)
        return cache[eps]

    profile_payoffs = tuple(priced(e)[0] for e in profile)
    report = NashReport(profile, horizon, profile_payoffs)
    for i, base in enumerate(profile):
        for e in grid:
            if e == base:
                continue
            payoff, participated = priced(e)
            delta = payoff - profile_payoffs[i]
            report.deviations.append(
                Deviation(i, e, payoff, delta, participated, delta > 0.0)
            )
    return report
