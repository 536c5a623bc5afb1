"""Episode evaluation: kill/death/object tallies, smoothed ratios, and
Welch's two-sample t-test with p-values from the regularized incomplete
beta function (no statistics tables)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .minidoom import ACTION_PROFILE, MapSpec, MiniDoomEnv, RewardProfile

SIGNIFICANCE_LEVEL = 0.05
RATIO_FOOTNOTE = (
    "ratios are total-count based with +1 denominator smoothing: "
    "sum(numerator) / (sum(denominator) + 1)"
)


@dataclass(frozen=True)
class EpisodeStats:
    kills: int
    deaths: int
    objects: int
    steps: int
    reward: float


def run_episodes(agent, map_spec: MapSpec, n: int, mode: str = "timed",
                 seed: int = 0, profile: RewardProfile = ACTION_PROFILE) -> list:
    """n evaluation episodes with seeds seed..seed+n-1.

    ``timed``: an episode spans map_spec.episode_step_limit ticks,
    respawning (seeded) after each death and counting it.
    ``until_death``: the episode ends at the first death (or at the
    step limit as a safety cap).
    """
    if mode not in ("timed", "until_death"):
        raise ValueError(f"unknown mode {mode!r} (expected timed|until_death)")
    if n < 1:
        raise ValueError("need at least one episode")
    results = []
    for k in range(n):
        episode_seed = seed + k
        rng = np.random.default_rng(np.random.SeedSequence((episode_seed, 0xE7A1)))
        env = MiniDoomEnv(map_spec, profile, obs_dims=_agent_obs_dims(agent))
        agent.begin_episode()
        obs = env.reset(episode_seed)
        tally = {"kill": 0, "death": 0, "object_gathered": 0}
        reward_sum = 0.0
        steps = 0
        respawn = 1
        while steps < map_spec.episode_step_limit:
            action = agent.act(obs, rng)
            outcome = env.step(action)
            steps += 1
            reward_sum += outcome.reward
            for name, count in outcome.events.items():
                tally[name] = tally.get(name, 0) + count
            obs = outcome.observation
            if outcome.done:
                if mode == "until_death" or steps >= map_spec.episode_step_limit:
                    break
                agent.begin_episode()
                obs = env.reset(episode_seed * 1_000_003 + respawn)
                respawn += 1
        results.append(
            EpisodeStats(
                kills=tally["kill"],
                deaths=tally["death"],
                objects=tally["object_gathered"],
                steps=steps,
                reward=reward_sum,
            )
        )
    return results


def _agent_obs_dims(agent):
    params = getattr(agent, "params", None) or getattr(agent, "nav_params", None)
    if params is None:
        return (84, 84)
    return (params.config.input_h, params.config.input_w)


def ratio(numerator_counts, denominator_counts) -> float:
    """Total-count ratio with +1 smoothing in the denominator."""
    num = float(np.sum(numerator_counts))
    den = float(np.sum(denominator_counts))
    if num < 0 or den < 0:
        raise ValueError("counts must be non-negative")
    return num / (den + 1.0)


# -- Student-t tail via the regularized incomplete beta --------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-12."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    return reg_inc_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float | None  # None = not defined (both samples have zero variance)
    df: float

    @property
    def significant(self) -> bool:
        return self.p is not None and self.p < SIGNIFICANCE_LEVEL


def welch_t_test(sample_a, sample_b, pooled: bool = False) -> TTestResult:
    """Two-tailed two-sample t-test, Welch by default.

    ``pooled=True`` selects the classic equal-variance Student variant.
    When both samples have zero variance the statistic is undefined and
    p is reported as None (NA).
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 observations")
    n1, n2 = a.size, b.size
    m1, m2 = a.mean(), b.mean()
    v1 = a.var(ddof=1)
    v2 = b.var(ddof=1)
    if v1 == 0.0 and v2 == 0.0:
        return TTestResult(t=math.nan, p=None, df=math.nan)
    if pooled:
        sp2 = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
        se = math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2))
        df = float(n1 + n2 - 2)
    else:
        se = math.sqrt(v1 / n1 + v2 / n2)
        df = (v1 / n1 + v2 / n2) ** 2 / (
            (v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)
        )
    t = float((m1 - m2) / se)
    return TTestResult(t=t, p=student_t_two_tailed_p(t, df), df=float(df))


# -- cross-table comparison -------------------------------------------------

METRICS = ("kills", "deaths", "objects")
METRICS_CSV_HEADER = "map,agent,episodes,kills,deaths,objects,kill_death_ratio,object_death_ratio,reward"
PVALUES_CSV_HEADER = "map,kills,deaths,objects"


@dataclass
class EvalReport:
    agent_names: list
    map_names: list
    episodes: dict      # (agent, map) -> [EpisodeStats]
    means: dict         # (agent, map) -> {metric: float}
    ratios: dict        # (agent, map) -> {kill_death, object_death}
    tests: dict         # (map, metric) -> TTestResult, first vs second agent
    mode: str
    footnote: str = RATIO_FOOTNOTE

    def metrics_csv(self) -> str:
        lines = [METRICS_CSV_HEADER]
        for map_name in self.map_names:
            for agent in self.agent_names:
                stats = self.episodes[(agent, map_name)]
                m = self.means[(agent, map_name)]
                r = self.ratios[(agent, map_name)]
                lines.append(
                    f"{map_name},{agent},{len(stats)},{m['kills']:.4f},{m['deaths']:.4f},"
                    f"{m['objects']:.4f},{r['kill_death']:.4f},{r['object_death']:.4f},"
                    f"{m['reward']:.4f}"
                )
        return "\n".join(lines) + "\n"

    def pvalues_csv(self) -> str:
        lines = [PVALUES_CSV_HEADER]
        for map_name in self.map_names:
            cells = []
            for metric in METRICS:
                res = self.tests[(map_name, metric)]
                if res.p is None:
                    cells.append("NA")
                else:
                    cells.append(f"{res.p:.6g}*" if res.significant else f"{res.p:.6g}")
            lines.append(",".join([map_name] + cells))
        return "\n".join(lines) + "\n"

    def pretty(self) -> str:
        out = []
        header = f"{'map':<16}{'agent':<12}{'kills':>8}{'deaths':>8}{'objects':>9}{'k/d':>8}{'o/d':>8}"
        out.append(header)
        out.append("-" * len(header))
        for map_name in self.map_names:
            for agent in self.agent_names:
                m = self.means[(agent, map_name)]
                r = self.ratios[(agent, map_name)]
                out.append(
                    f"{map_name:<16}{agent:<12}{m['kills']:>8.2f}{m['deaths']:>8.2f}"
                    f"{m['objects']:>9.2f}{r['kill_death']:>8.2f}{r['object_death']:>8.2f}"
                )
        out.append("")
        out.append(f"{'map':<16}" + "".join(f"{m:>14}" for m in METRICS) + "   (p-values, * = p<0.05)")
        for map_name in self.map_names:
            cells = []
            for metric in METRICS:
                res = self.tests[(map_name, metric)]
                if res.p is None:
                    cells.append(f"{'NA':>14}")
                else:
                    mark = "*" if res.significant else ""
                    cells.append(f"{res.p:>13.3g}{mark or ' '}")
            out.append(f"{map_name:<16}" + "".join(cells))
        out.append("")
        out.append(f"note: {self.footnote}")
        return "\n".join(out) + "\n"


def aggregate(agent_names, map_names, episodes: dict, mode: str) -> EvalReport:
    """Build the report from per-cell episode lists (order-independent)."""
    means, ratios = {}, {}
    for key, stats in episodes.items():
        if len(stats) < 2:
            raise ValueError("need at least 2 episodes per cell for the t-tests")
        means[key] = {
            "kills": float(np.mean([s.kills for s in stats])),
            "deaths": float(np.mean([s.deaths for s in stats])),
            "objects": float(np.mean([s.objects for s in stats])),
            "reward": float(np.mean([s.reward for s in stats])),
        }
        ratios[key] = {
            "kill_death": ratio([s.kills for s in stats], [s.deaths for s in stats]),
            "object_death": ratio([s.objects for s in stats], [s.deaths for s in stats]),
        }
    tests = {}
    if len(agent_names) >= 2:
        first, second = agent_names[0], agent_names[1]
        for map_name in map_names:
            for metric in METRICS:
                sa = [getattr(s, metric) for s in episodes[(first, map_name)]]
                sb = [getattr(s, metric) for s in episodes[(second, map_name)]]
                tests[(map_name, metric)] = welch_t_test(sa, sb)
    return EvalReport(
        agent_names=list(agent_names),
        map_names=list(map_names),
        episodes=dict(episodes),
        means=means,
        ratios=ratios,
        tests=tests,
        mode=mode,
    )


def compare(agents: dict, maps: dict, n: int, mode: str = "timed", seed: int = 0,
            profile: RewardProfile = ACTION_PROFILE) -> EvalReport:
    """Full cross table: every agent on every map for n episodes each."""
    if n < 2:
        raise ValueError("need at least 2 episodes per cell for the t-tests")
    agent_names = list(agents)
    map_names = list(maps)
    episodes = {}
    for agent_name, agent in agents.items():
        for map_name, map_spec in maps.items():
            episodes[(agent_name, map_name)] = run_episodes(
                agent, map_spec, n, mode=mode, seed=seed, profile=profile
            )
    return aggregate(agent_names, map_names, episodes, mode)
