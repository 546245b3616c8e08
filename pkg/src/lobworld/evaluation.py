"""Historical replay of any policy, regime tagging, and dream-versus-replay comparison."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .benchmarks import (ALL_QUANTITIES, DEFAULT_ALPHA, MOVEMENT_LABELS, MovementClassifier,
                         greedy_optimal, momentum_policy, momentum_signal)
from .data import (CONTEXT_LENGTH, QTY_MAX, TICKS_PER_STATE, DayData, LobWindow, StateChain,
                   TradeContext, minmax_columns, state_chain)
from .reward import FEE_RATE, clamp_positions, replay_reward, transaction_fee
from .synthetic import REGIMES
from .world import (DreamEnv, WorldModel, action_quantities, agent_state_vector, encode_chain,
                    initial_states)

EVAL_STATES = 300
REGIME_WINDOW = 1000
REGIME_THRESHOLD = 1.0   # price units per 1000 ticks


# ----------------------------------------------------------------------------- policies

@dataclass(frozen=True, eq=False)
class Observation:
    step: int
    window: LobWindow
    context: TradeContext
    position: int
    po_max: int = QTY_MAX


class Policy:
    """Replay interface: ``reset`` once per day, then ``act`` returns a signed quantity."""

    name = "policy"

    def reset(self, chain: StateChain) -> None:
        pass

    def act(self, obs: Observation) -> int:
        raise NotImplementedError


class ZeroPolicy(Policy):
    name = "zero"

    def act(self, obs):
        return 0


class ConstantPolicy(Policy):
    """Submit the same signed quantity every step (buy-and-hold when positive)."""

    def __init__(self, quantity: int, name: str | None = None):
        self.quantity = int(quantity)
        self.name = name or f"constant{self.quantity:+d}"

    def act(self, obs):
        return self.quantity


class MomentumStrategy(Policy):
    def __init__(self, q_fixed: int, alpha: float = DEFAULT_ALPHA, name: str | None = None):
        self.q_fixed, self.alpha = int(q_fixed), alpha
        self.name = name or f"momentum{self.q_fixed}"

    def act(self, obs):
        return momentum_policy(momentum_signal(obs.window, self.alpha), self.q_fixed)


class ClassifierStrategy(Policy):
    """Trade ``q_fixed`` in the direction the classifier predicts for the next state."""

    def __init__(self, classifier: MovementClassifier, q_fixed: int, name: str | None = None):
        self.classifier, self.q_fixed = classifier, int(q_fixed)
        self.name = name or f"classifier{self.q_fixed}"

    def reset(self, chain):
        if len(chain) == 0:
            self.pred = np.zeros(0, dtype=np.int64)
            return
        feats = minmax_columns(np.stack([w.features for w in chain.windows]))
        self.pred = self.classifier.predict(feats)

    def act(self, obs):
        label = MOVEMENT_LABELS[int(self.pred[obs.step])]
        return {"up": self.q_fixed, "down": -self.q_fixed, "no_change": 0}[label]


class GreedyStrategy(Policy):
    """Replays the greedy-with-future-knowledge action sequence of the day."""

    name = "greedy"

    def __init__(self, fee_rate: float = FEE_RATE, po_max: int = QTY_MAX,
                 quantities: Sequence[int] = ALL_QUANTITIES):
        self.fee_rate, self.po_max, self.quantities = fee_rate, po_max, tuple(quantities)

    def reset(self, chain):
        self.trace = greedy_optimal(chain, self.quantities, self.po_max, self.fee_rate)

    def act(self, obs):
        return int(self.trace.quantities[obs.step])


class AgentPolicy(Policy):
    """A trained agent acting greedily on states built exactly as in the dream corpus."""

    def __init__(self, agent, encoder, name: str | None = None, po_max: int = QTY_MAX):
        self.agent, self.encoder, self.po_max = agent, encoder, po_max
        self.name = name or f"rl-{getattr(agent, 'kind', 'agent')}"

    def reset(self, chain):
        self.latents = encode_chain(chain, self.encoder)

    def state_vector(self, obs: Observation) -> np.ndarray:
        return agent_state_vector(self.latents.z[obs.step], self.latents.emb[obs.step],
                                  obs.position, self.po_max)

    def act(self, obs):
        idx = self.agent.act(self.state_vector(obs)[None], None, greedy=True)
        return int(action_quantities(idx)[0])


# ----------------------------------------------------------------------------- regimes

@dataclass(frozen=True)
class RegimeTag:
    label: str
    start: int   # first tick offset, inclusive
    stop: int    # exclusive

    def __post_init__(self):
        if self.label not in REGIMES:
            raise ValueError(f"unknown regime {self.label!r}")
        if self.stop <= self.start:
            raise ValueError("empty regime segment")


def local_slopes(mids, window: int = REGIME_WINDOW) -> np.ndarray:
    """Least-squares slope of a centred window (truncated at the ends) around every tick."""
    y = np.asarray(mids, dtype=np.float64)
    n = len(y)
    t = np.arange(n, dtype=np.float64)
    half = window // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)

    def csum(v):
        return np.concatenate([[0.0], np.cumsum(v)])

    # centre the clock and the prices to keep the sums well conditioned
    tc, yc = t - t.mean(), y - y.mean()
    S1, St, Sy = csum(np.ones(n)), csum(tc), csum(yc)
    Stt, Sty = csum(tc * tc), csum(tc * yc)
    k = S1[hi] - S1[lo]
    st, sy = St[hi] - St[lo], Sy[hi] - Sy[lo]
    var = (Stt[hi] - Stt[lo]) - st * st / k
    cov = (Sty[hi] - Sty[lo]) - st * sy / k
    return np.where(var > 0, cov / np.where(var > 0, var, 1.0), 0.0)


def regime_labels(mids, window: int = REGIME_WINDOW,
                  threshold: float = REGIME_THRESHOLD) -> np.ndarray:
    slope = local_slopes(mids, window) * 1000.0
    return np.where(slope > threshold, "ascending",
                    np.where(slope < -threshold, "descending", "oscillating"))


def tag_regimes(mids, window: int = REGIME_WINDOW,
                threshold: float = REGIME_THRESHOLD) -> list[RegimeTag]:
    """Partition the series into maximal runs of one label.

    A tick is ascending (descending) when the local trend exceeds
    ``threshold`` (falls below ``-threshold``) price units per 1000 ticks, and
    oscillating otherwise.
    """
    labels = regime_labels(mids, window, threshold)
    if len(labels) == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    bounds = np.concatenate([[0], cuts, [len(labels)]])
    return [RegimeTag(str(labels[a]), int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def dominant_regime(tags: Sequence[RegimeTag]) -> str:
    share = {r: 0 for r in REGIMES}
    for t in tags:
        share[t.label] += t.stop - t.start
    return max(REGIMES, key=lambda r: share[r])


# ----------------------------------------------------------------------------- reports

@dataclass
class DayReport:
    day: str
    ticks: list[int]              # tick at which each step's PnL is realised
    positions: list[int]
    gross: list[float]            # per-step reward before fees
    fees: list[float]
    cum_pnl: list[float]          # net of fees
    cum_pnl_gross: list[float]
    actions: list[dict]           # executed trades: step, tick, quantity, direction
    regimes: list[dict]

    @property
    def total_pnl(self) -> float:
        return self.cum_pnl[-1] if self.cum_pnl else 0.0

    @property
    def total_pnl_gross(self) -> float:
        return self.cum_pnl_gross[-1] if self.cum_pnl_gross else 0.0

    @property
    def regime(self) -> str:
        return dominant_regime([RegimeTag(**r) for r in self.regimes]) if self.regimes else ""


@dataclass
class EvalReport:
    strategy: str
    fee_rate: float
    po_max: int
    W: int
    days: list[DayReport] = field(default_factory=list)

    def totals(self, fees: bool = True) -> np.ndarray:
        return np.array([d.total_pnl if fees else d.total_pnl_gross for d in self.days])

    def summary(self) -> dict:
        net, gross = self.totals(True), self.totals(False)
        n = len(net)
        return {"n_days": n,
                "total_pnl": float(net.sum()), "total_pnl_no_fees": float(gross.sum()),
                "mean_pnl": float(net.mean()) if n else 0.0,
                "var_pnl": float(net.var(ddof=1)) if n > 1 else 0.0,
                "mean_pnl_no_fees": float(gross.mean()) if n else 0.0,
                "var_pnl_no_fees": float(gross.var(ddof=1)) if n > 1 else 0.0}

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "fee_rate": self.fee_rate, "po_max": self.po_max,
                "W": self.W, "summary": self.summary(), "days": [asdict(d) for d in self.days]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["strategy"], d["fee_rate"], d["po_max"], d["W"],
                   [DayReport(**day) for day in d["days"]])

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "day", "step", "tick", "position", "reward", "fee",
                        "cum_pnl", "cum_pnl_no_fees"])
            for d in self.days:
                for k in range(len(d.ticks)):
                    w.writerow([self.strategy, d.day, k, d.ticks[k], d.positions[k],
                                repr(d.gross[k]), repr(d.fees[k]), repr(d.cum_pnl[k]),
                                repr(d.cum_pnl_gross[k])])


def replay_day(policy: Policy, day: DayData, fee_rate: float = FEE_RATE,
               po_max: int = QTY_MAX, W: int = TICKS_PER_STATE, U: int = CONTEXT_LENGTH,
               max_states: int | None = EVAL_STATES, regime_window: int = REGIME_WINDOW,
               regime_threshold: float = REGIME_THRESHOLD) -> DayReport:
    """Step one day: act at the end of window k, earn the mid change to window k+1, pay fees."""
    chain = state_chain(day, W, U, max_states, po_max=po_max)
    policy.reset(chain)
    po = 0
    ticks, positions, gross, fees, actions = [], [], [], [], []
    for k in range(len(chain) - 1):
        win, nxt = chain.windows[k], chain.windows[k + 1]
        q = int(policy.act(Observation(k, win, chain.contexts[k], po, po_max)))
        po_new = int(clamp_positions(po, q, po_max))
        executed = po_new - po
        r = replay_reward(win, nxt, po_new)
        fee = float(transaction_fee(executed, nxt.mean_mid() - win.mean_mid(), fee_rate))
        if executed:
            actions.append({"step": k, "tick": win.last_tick, "quantity": abs(executed),
                            "direction": "buy" if executed > 0 else "sell"})
        ticks.append(nxt.last_tick)
        positions.append(po_new)
        gross.append(float(r))
        fees.append(fee)
        po = po_new
    span = np.concatenate([w.mids for w in chain.windows]) if len(chain) else np.zeros(0)
    tags = tag_regimes(span, regime_window, regime_threshold)
    g, f = np.array(gross), np.array(fees)
    return DayReport(day.name, ticks, positions, gross, fees,
                     [float(v) for v in np.cumsum(g - f)], [float(v) for v in np.cumsum(g)],
                     actions, [asdict(t) for t in tags])


def replay_policy(policy: Policy, days: Sequence[DayData], fee_rate: float = FEE_RATE,
                  po_max: int = QTY_MAX, W: int = TICKS_PER_STATE, U: int = CONTEXT_LENGTH,
                  max_states: int | None = EVAL_STATES, **regime_kw) -> EvalReport:
    """Evaluate ``policy`` on every day with exact replay rewards; the policy is never updated."""
    report = EvalReport(policy.name, fee_rate, po_max, W)
    for day in days:
        report.days.append(replay_day(policy, day, fee_rate, po_max, W, U, max_states,
                                      **regime_kw))
    return report


def recompute_cum_pnl(day_report: DayReport, day: DayData, fee_rate: float = FEE_RATE,
                      po_max: int = QTY_MAX, W: int = TICKS_PER_STATE,
                      fees: bool = True) -> np.ndarray:
    """Rebuild the cumulative PnL curve from the action log and the raw stream alone."""
    n = len(day_report.ticks) + 1
    mids = day.lob.mids()
    mm = mids[:n * W].reshape(n, W).mean(axis=1)
    trades = {a["step"]: a["quantity"] * (1 if a["direction"] == "buy" else -1)
              for a in day_report.actions}
    po, out = 0, []
    for k in range(n - 1):
        q = trades.get(k, 0)
        po_new = int(clamp_positions(po, q, po_max))
        delta = mm[k + 1] - mm[k]
        out.append(delta * po_new - (fee_rate * abs(po_new - po) * abs(delta) if fees else 0.0))
        po = po_new
    return np.cumsum(out)


# ----------------------------------------------------------------------------- comparisons

@dataclass
class DreamReplayTable:
    days: list[str]
    dream: list[float]
    replay: list[float]

    @property
    def correlation(self) -> float:
        d, r = np.asarray(self.dream), np.asarray(self.replay)
        if len(d) < 2 or d.std() == 0 or r.std() == 0:
            return float("nan")
        return float(np.corrcoef(d, r)[0, 1])

    @property
    def sign_agreement(self) -> float:
        if not self.days:
            return float("nan")
        return float(np.mean(np.sign(self.dream) == np.sign(self.replay)))

    def to_dict(self) -> dict:
        return {"days": self.days, "dream": self.dream, "replay": self.replay,
                "correlation": self.correlation, "sign_agreement": self.sign_agreement}


def compare_dream_vs_replay(agent, world: WorldModel, days: Sequence[DayData], H: int = 100,
                            n_days: int = 5, n_samples: int = 8, seed: int = 0
                            ) -> DreamReplayTable:
    """Cumulative unsquashed reward over ``H`` steps in the dream and on replay, per day.

    Both sides start from the same real state: the day's first ``N - 1``
    windows form the dream history and the ``N``-th is the first decision.
    The dream column averages ``n_samples`` sampled futures.
    """
    cfg = world.config
    N = cfg.seq_len
    rng = np.random.default_rng(seed)
    table = DreamReplayTable([], [], [])
    for day in list(days)[:n_days]:
        chain = state_chain(day, cfg.W, cfg.U, N + H, po_max=cfg.po_max)
        if len(chain) < N + H:
            raise ValueError(f"day {day.name} is too short for {N + H} states")
        lat = encode_chain(chain, world.autoencoder)
        mm = lat.mean_mids
        # replay from the decision state N-1 for H steps
        po, total = 0, 0.0
        for k in range(N - 1, N - 1 + H):
            s = agent_state_vector(lat.z[k], lat.emb[k], po, cfg.po_max)[None]
            q = int(action_quantities(agent.act(s, None, greedy=True))[0])
            po = int(clamp_positions(po, q, cfg.po_max))
            total += (mm[k + 1] - mm[k]) * po
        # dream from the same opening
        start = initial_states([lat], N)
        sub = WorldModel(world.autoencoder, world.transition, world.reward, world.bounds, start,
                         world.context_pool, cfg)
        env = DreamEnv(sub, n_samples, rng, fee_rate=0.0)
        s = env.reset(np.zeros(n_samples, dtype=np.int64))
        dream = np.zeros(n_samples)
        for _ in range(H):
            s, raw, _ = env.step(agent.act(s, None, greedy=True))
            dream += raw
        table.days.append(day.name)
        table.dream.append(float(dream.mean()))
        table.replay.append(float(total))
    return table


def variance_report(reports: Mapping[str, EvalReport]) -> dict[str, dict[str, float]]:
    """Across-day variance of total net PnL per strategy and dominant regime, plus overall.

    Cells with fewer than two days are ``nan``.
    """
    table: dict[str, dict[str, float]] = {}
    for name, rep in reports.items():
        row = {}
        for regime in ("descending", "ascending", "oscillating"):
            vals = np.array([d.total_pnl for d in rep.days if d.regime == regime])
            row[regime] = float(vals.var(ddof=1)) if len(vals) >= 2 else float("nan")
        tot = rep.totals()
        row["total"] = float(tot.var(ddof=1)) if len(tot) >= 2 else float("nan")
        table[name] = row
    return table


def rank_reports(reports: Sequence[EvalReport]) -> list[dict]:
    """Strategies ordered by mean daily net PnL (best first)."""
    rows = [{"strategy": r.strategy, **r.summary()} for r in reports]
    rows.sort(key=lambda row: -row["mean_pnl"])
    for i, row in enumerate(rows, start=1):
        row["rank"] = i
    return rows
