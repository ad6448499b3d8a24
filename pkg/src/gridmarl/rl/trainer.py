"""Rollouts, update rules, and the batch training loop.

Three algorithms share one rollout/metrics pipeline:

* ``graph-ac``  -- each agent acts on its own depth-k sub-graph; actions are
  ensembled across the sub-graphs containing the agent; a per-member critic
  baseline turns rewards into TD errors driving both networks (the full
  actor-critic).
* ``graph-pg``  -- identical rollout and ensembling, but the update
  coefficient is the centre agent's discounted return-to-go and there is no
  critic.
* ``vanilla-pg`` -- REINFORCE on a two-layer perceptron over each agent's own
  47-dim feature; no graphs, no ensembling. The reference baseline.

Each team owns one parameter set shared by its agents (plus a critic and
optimizer state). A sub-graph is evaluated by its centre's team; an agent
ensembles only distributions produced by its own team's policy, while
actor-gradient terms flow to the owning team for every member of its
sub-graphs. Updates accumulate over a batch of episodes (summed within an
episode, averaged across episodes, negated into the Adam minimizer); an
optional per-step mode applies updates inside the episode instead.

Episodes of a batch run against frozen parameters with per-episode seeds
derived from (run seed, batch, episode), so results are identical whether
they execute sequentially or on a thread pool.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..errors import ConfigError
from ..graph import (
    DEFAULT_DELTA_D,
    DEFAULT_N_MAX,
    SubGraph,
    VERTEX_DIM,
    all_vertex_features,
    build_graph,
    decompose,
)
from ..gridworld import (
    Action,
    GridWorld,
    N_ACTIONS,
    Scenario,
    ScenarioConfig,
    StepOutcome,
    new_scenario,
)
from ..nn.network import (
    GraphBatch,
    backward,
    batch_subgraphs,
    critic_values,
    mlp_logprobs,
    policy_logprobs,
)
from ..nn.optim import AdamState, PlateauSchedule, adam_state, adam_step, plateau_update
from ..nn.params import (
    MlpParams,
    NetParams,
    Params,
    add_scaled_,
    new_graph_net,
    new_mlp,
    scale_,
    zeros_like_params,
)
from .core import ensemble_action, returns_to_go

ALGORITHMS = ("vanilla-pg", "graph-pg", "graph-ac")

# vertex-row budget for one batched forward; keeps the big sweeps bounded
ROW_BUDGET = 65536


@dataclass(frozen=True)
class TrainerConfig:
    algorithm: str = "graph-ac"
    gamma: float = 0.99
    lr_policy: float = 0.01
    lr_critic: float = 0.01
    depth: int = 3
    batch_episodes: int = 100
    per_step_updates: bool = False

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}, pick from {ALGORITHMS}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lr_policy <= 0 or self.lr_critic <= 0:
            raise ConfigError("learning rates must be positive")
        if self.depth < 1:
            raise ConfigError(f"depth must be at least 1, got {self.depth}")
        if self.batch_episodes < 1:
            raise ConfigError("batch_episodes must be at least 1")
        if self.per_step_updates and self.algorithm != "graph-ac":
            raise ConfigError("per-step updates require the graph-ac algorithm")


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 64
    rounds: int = 2
    delta_d: float = DEFAULT_DELTA_D
    n_max: int = DEFAULT_N_MAX

    def validate(self) -> None:
        if self.hidden < 1 or self.rounds < 0 or self.n_max < 1:
            raise ConfigError("network sizes must be positive")
        if self.delta_d <= 0:
            raise ConfigError("delta_d must be positive")


@dataclass
class TeamNets:
    """One team's learnable state: policy, optional critic, optimizers."""

    policy: Params
    critic: Optional[NetParams]
    adam_policy: AdamState
    adam_critic: Optional[AdamState]
    sched: PlateauSchedule
    lr_ratio: float  # critic lr / policy lr at construction


def new_team_nets(tcfg: TrainerConfig, ncfg: NetConfig, rng: np.random.Generator) -> TeamNets:
    if tcfg.algorithm == "vanilla-pg":
        policy: Params = new_mlp(rng, VERTEX_DIM, ncfg.hidden, N_ACTIONS)
    else:
        policy = new_graph_net(
            rng, VERTEX_DIM, ncfg.hidden, ncfg.n_max, N_ACTIONS, ncfg.rounds, pooled=False
        )
    critic = None
    adam_c = None
    if tcfg.algorithm == "graph-ac":
        critic = new_graph_net(
            rng, VERTEX_DIM + N_ACTIONS, ncfg.hidden, ncfg.n_max, 1, ncfg.rounds, pooled=True
        )
        adam_c = adam_state(critic, tcfg.lr_critic)
    return TeamNets(
        policy=policy,
        critic=critic,
        adam_policy=adam_state(policy, tcfg.lr_policy),
        adam_critic=adam_c,
        sched=PlateauSchedule(lr=tcfg.lr_policy),
        lr_ratio=tcfg.lr_critic / tcfg.lr_policy,
    )


# -- episode records ---------------------------------------------------------


@dataclass
class SubStep:
    """One sub-graph's sampling record within one step."""

    sg: SubGraph
    probs: np.ndarray     # (m, 5) member distributions at sampling time
    sampled: np.ndarray   # (m,) member actions drawn per sub-graph
    executed: np.ndarray  # (m,) post-coercion actions the world executed
    reward: float = 0.0   # centre's reward for this step


@dataclass
class StepData:
    per_centre: dict[int, SubStep]
    outcome: StepOutcome


@dataclass
class Transition:
    """One centre agent's (sub-graph, action, reward, successor) tuple."""

    step: SubStep
    next: Optional[SubStep]  # None once the agent or episode terminated
    t: int

    @property
    def centre(self) -> int:
        return self.step.sg.centre


@dataclass
class FlatStep:
    """Vanilla-PG record: one row per living agent of one team."""

    ids: np.ndarray
    feats: np.ndarray
    sampled: np.ndarray
    rewards: np.ndarray


@dataclass
class EpisodeStats:
    steps: int
    returns: dict[int, float]       # per team: mean per-agent episode return
    alive_end: dict[int, int]
    wins: dict[int, float]          # per team, empty for jungle
    subgraphs: int
    subgraph_size_sum: int


@dataclass
class EpisodeResult:
    steps: Optional[list[StepData]]
    flat: Optional[dict[int, list[FlatStep]]]
    stats: EpisodeStats


def _team_of(world: GridWorld) -> dict[int, int]:
    return {a.id: a.team for a in world.agents}


def _episode_stats(
    world: GridWorld,
    agent_returns: dict[int, float],
    steps: int,
    subgraphs: int,
    size_sum: int,
) -> EpisodeStats:
    team_of = _team_of(world)
    teams = sorted(set(team_of.values()))
    returns = {
        t: float(np.mean([agent_returns.get(a.id, 0.0) for a in world.agents if a.team == t]))
        for t in teams
    }
    alive = {t: world.num_alive(t) for t in teams}
    wins: dict[int, float] = {}
    if world.scenario is Scenario.BATTLE:
        wins = {0: float(alive[0] > alive[1]), 1: float(alive[1] > alive[0])}
    elif world.scenario is Scenario.DECEPTION:
        tgt = world.target_cell()
        adv_on = any(a.pos == tgt for a in world.alive_agents() if a.team == 1)
        home_on = any(a.pos == tgt for a in world.alive_agents() if a.team == 0)
        wins = {0: float(home_on and not adv_on), 1: float(adv_on)}
    return EpisodeStats(
        steps=steps,
        returns=returns,
        alive_end=alive,
        wins=wins,
        subgraphs=subgraphs,
        subgraph_size_sum=size_sum,
    )


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical draw per row."""
    u = rng.random((probs.shape[0], 1))
    acts = (np.cumsum(probs, axis=1) < u).sum(axis=1)
    return np.minimum(acts, N_ACTIONS - 1).astype(np.int64)


def _graph_step(
    world: GridWorld,
    nets: Mapping[int, TeamNets],
    tcfg: TrainerConfig,
    ncfg: NetConfig,
    rng: np.random.Generator,
    mode: str,
    random_teams: frozenset[int],
) -> StepData:
    """Sample, ensemble, coerce, and advance the world by one tick."""
    team_of = _team_of(world)
    g = build_graph(world)
    sgs = decompose(g, tcfg.depth, ncfg.delta_d, ncfg.n_max)
    by_team: dict[int, list[SubGraph]] = {}
    for sg in sgs:
        by_team.setdefault(team_of[sg.centre], []).append(sg)

    per_centre: dict[int, SubStep] = {}
    dists: dict[int, list[np.ndarray]] = {}
    for team in sorted(by_team):
        if team in random_teams:
            continue
        batch = batch_subgraphs(by_team[team])
        logp, _ = policy_logprobs(batch, nets[team].policy)
        probs = np.exp(logp)
        probs /= probs.sum(axis=1, keepdims=True)
        acts = _sample_rows(probs, rng) if mode == "sample" else probs.argmax(axis=1)
        row = 0
        for sg in by_team[team]:
            m = sg.n_members()
            p = probs[row : row + m]
            per_centre[sg.centre] = SubStep(
                sg=sg,
                probs=p,
                sampled=acts[row : row + m].astype(np.int64),
                executed=np.zeros(m, dtype=np.int64),
            )
            for k, mid in enumerate(sg.members):
                if team_of[int(mid)] == team:
                    dists.setdefault(int(mid), []).append(p[k])
            row += m

    joint: dict[int, Action] = {}
    for a in world.alive_agents():
        if a.team in random_teams:
            act = int(rng.integers(N_ACTIONS))
        else:
            act, _ = ensemble_action(dists[a.id], mode=mode, rng=rng)
        action = Action(act)
        if action not in world.legal_actions(a.id):
            action = Action.IDLE
        joint[a.id] = action

    outcome = world.step(joint)
    for centre, ss in per_centre.items():
        ss.reward = outcome.rewards[centre]
        ss.executed = np.array([joint[int(mid)] for mid in ss.sg.members], dtype=np.int64)
    return StepData(per_centre=per_centre, outcome=outcome)


def rollout_graph(
    world: GridWorld,
    nets: Mapping[int, TeamNets],
    tcfg: TrainerConfig,
    ncfg: NetConfig,
    rng: np.random.Generator,
    collect: bool = True,
    mode: str = "sample",
    random_teams: frozenset[int] = frozenset(),
) -> EpisodeResult:
    """Run one episode to completion under the sub-graph pipeline."""
    steps: list[StepData] = []
    agent_returns: dict[int, float] = {}
    n_sub = 0
    size_sum = 0
    n_steps = 0
    while not world.finished:
        sd = _graph_step(world, nets, tcfg, ncfg, rng, mode, random_teams)
        n_steps += 1
        for ss in sd.per_centre.values():
            n_sub += 1
            size_sum += ss.sg.n_members()
        for aid, r in sd.outcome.rewards.items():
            agent_returns[aid] = agent_returns.get(aid, 0.0) + r
        if collect:
            steps.append(sd)
    stats = _episode_stats(world, agent_returns, n_steps, n_sub, size_sum)
    return EpisodeResult(steps=steps if collect else None, flat=None, stats=stats)


def _flat_step(
    world: GridWorld,
    nets: Mapping[int, TeamNets],
    rng: np.random.Generator,
    mode: str,
    random_teams: frozenset[int],
) -> tuple[StepOutcome, dict[int, FlatStep]]:
    """One tick of the vanilla pipeline; returns per-team row records."""
    ids, feats = all_vertex_features(world)
    team_of = _team_of(world)
    teams = sorted({a.team for a in world.agents})
    joint: dict[int, Action] = {}
    sampled: dict[int, int] = {}
    rows: dict[int, np.ndarray] = {}
    for team in teams:
        mask = np.array([team_of[int(i)] == team for i in ids])
        if not mask.any() or team in random_teams:
            continue
        logp, _ = mlp_logprobs(feats[mask], nets[team].policy)
        probs = np.exp(logp)
        probs /= probs.sum(axis=1, keepdims=True)
        rows[team] = probs
    cursor = {t: 0 for t in rows}
    for a in world.alive_agents():
        if a.team in random_teams:
            act = int(rng.integers(N_ACTIONS))
        else:
            probs = rows[a.team][cursor[a.team]]
            cursor[a.team] += 1
            if mode == "sample":
                u = rng.random()
                act = min(int((np.cumsum(probs) < u).sum()), N_ACTIONS - 1)
            else:
                act = int(np.argmax(probs))
        sampled[a.id] = act
        action = Action(act)
        if action not in world.legal_actions(a.id):
            action = Action.IDLE
        joint[a.id] = action
    outcome = world.step(joint)
    records: dict[int, FlatStep] = {}
    for team in teams:
        if team in random_teams:
            continue
        sel = [k for k, i in enumerate(ids) if team_of[int(i)] == team]
        if not sel:
            continue
        tid = ids[sel]
        records[team] = FlatStep(
            ids=tid,
            feats=feats[sel],
            sampled=np.array([sampled[int(i)] for i in tid], dtype=np.int64),
            rewards=np.array([outcome.rewards[int(i)] for i in tid]),
        )
    return outcome, records


def rollout_flat(
    world: GridWorld,
    nets: Mapping[int, TeamNets],
    rng: np.random.Generator,
    collect: bool = True,
    mode: str = "sample",
    random_teams: frozenset[int] = frozenset(),
) -> EpisodeResult:
    """Vanilla rollout: every agent acts on its own observation alone."""
    flat: dict[int, list[FlatStep]] = {t: [] for t in sorted({a.team for a in world.agents})}
    agent_returns: dict[int, float] = {}
    n_steps = 0
    while not world.finished:
        outcome, records = _flat_step(world, nets, rng, mode, random_teams)
        n_steps += 1
        for aid, r in outcome.rewards.items():
            agent_returns[aid] = agent_returns.get(aid, 0.0) + r
        if collect:
            for team, rec in records.items():
                flat[team].append(rec)
    stats = _episode_stats(world, agent_returns, n_steps, 0, 0)
    return EpisodeResult(steps=None, flat=flat if collect else None, stats=stats)


def play_step(
    world: GridWorld,
    nets: Mapping[int, TeamNets],
    tcfg: TrainerConfig,
    ncfg: NetConfig,
    rng: np.random.Generator,
    mode: str = "greedy",
    random_teams: frozenset[int] = frozenset(),
) -> StepOutcome:
    """Advance the world one tick under frozen policies (for inspection)."""
    if isinstance(nets[min(nets)].policy, MlpParams):
        outcome, _ = _flat_step(world, nets, rng, mode, random_teams)
        return outcome
    return _graph_step(world, nets, tcfg, ncfg, rng, mode, random_teams).outcome


def team_transitions(steps: Sequence[StepData], team_of: Mapping[int, int], team: int) -> list[Transition]:
    """Assemble per-centre transitions with successor links for one team."""
    out: list[Transition] = []
    for t, sd in enumerate(steps):
        nxt = steps[t + 1].per_centre if t + 1 < len(steps) else {}
        for centre, ss in sd.per_centre.items():
            if team_of[centre] != team:
                continue
            out.append(Transition(step=ss, next=nxt.get(centre), t=t))
    return out


# -- batched critic sweeps ---------------------------------------------------


def _flush_sweep(
    parts: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    n_graphs: int,
    critic: NetParams,
    out: list[np.ndarray],
    shapes: list[int],
) -> None:
    if not parts:
        return
    xs, srcs, dsts, zs, owner = zip(*parts)
    batch = GraphBatch(
        x=np.concatenate(xs, axis=0),
        edge_src=np.concatenate(srcs),
        edge_dst=np.concatenate(dsts),
        z0=np.concatenate(zs, axis=0),
        graph_of=np.concatenate(owner),
        n_graphs=n_graphs,
    )
    vals, _ = critic_values(batch, critic)
    pos = 0
    for m in shapes:
        out.append(vals[pos : pos + N_ACTIONS * m].reshape(m, N_ACTIONS))
        pos += N_ACTIONS * m
    parts.clear()
    shapes.clear()


def sweep_values(
    entries: Sequence[tuple[SubGraph, np.ndarray]],
    critic: NetParams,
    row_budget: int = ROW_BUDGET,
) -> list[np.ndarray]:
    """Critic values for every (member, action) sweep of each entry.

    For an entry (sub-graph, base joint) the result is an (m, 5) array whose
    (j, a) element is q(sg, base with member j's action replaced by a). All
    variants of all entries are evaluated in a few large batched forwards,
    chunked by a vertex-row budget to bound memory.
    """
    out: list[np.ndarray] = []
    parts: list = []
    shapes: list[int] = []
    rows = 0
    graphs = 0
    for sg, base in entries:
        m = sg.n_members()
        copies = N_ACTIONS * m
        base_x = np.concatenate(
            [sg.features, np.eye(N_ACTIONS)[np.asarray(base, dtype=np.int64)]], axis=1
        )
        x = np.tile(base_x, (copies, 1)).reshape(copies, m, base_x.shape[1])
        jj = np.repeat(np.arange(m), N_ACTIONS)
        aa = np.tile(np.arange(N_ACTIONS), m)
        x[np.arange(copies), jj, VERTEX_DIM:] = 0.0
        x[np.arange(copies), jj, VERTEX_DIM + aa] = 1.0
        offs = rows + np.arange(copies, dtype=np.int64) * m  # chunk-local row base per copy
        src = (sg.edge_src[None, :] + offs[:, None]).ravel()
        dst = (sg.edge_dst[None, :] + offs[:, None]).ravel()
        z = np.tile(sg.edge_feat, (copies, 1))
        owner = np.repeat(np.arange(graphs, graphs + copies, dtype=np.int64), m)
        parts.append((x.reshape(copies * m, -1), src, dst, z, owner))
        shapes.append(m)
        rows += copies * m
        graphs += copies
        if rows >= row_budget:
            _flush_sweep(parts, graphs, critic, out, shapes)
            rows = 0
            graphs = 0
    _flush_sweep(parts, graphs, critic, out, shapes)
    return out


def chunked_critic_values(
    entries: Sequence[tuple[SubGraph, np.ndarray]],
    critic: NetParams,
    row_budget: int = ROW_BUDGET,
) -> np.ndarray:
    """Plain critic values for (sub-graph, joint) pairs, chunked."""
    vals = np.empty(len(entries))
    start = 0
    while start < len(entries):
        end = start
        rows = 0
        while end < len(entries) and (end == start or rows + entries[end][0].n_members() <= row_budget):
            rows += entries[end][0].n_members()
            end += 1
        batch = batch_subgraphs(
            [sg for sg, _ in entries[start:end]], joints=[j for _, j in entries[start:end]]
        )
        v, _ = critic_values(batch, critic)
        vals[start:end] = v
        start = end
    return vals


# -- per-episode gradient computation ----------------------------------------


def _substep_probs(
    substeps: Sequence[SubStep], policy: NetParams, row_budget: int = ROW_BUDGET
) -> list[np.ndarray]:
    """Recompute member distributions under the current parameters."""
    out: list[np.ndarray] = []
    start = 0
    while start < len(substeps):
        end = start
        rows = 0
        while end < len(substeps) and (end == start or rows + substeps[end].sg.n_members() <= row_budget):
            rows += substeps[end].sg.n_members()
            end += 1
        batch = batch_subgraphs([ss.sg for ss in substeps[start:end]])
        logp, _ = policy_logprobs(batch, policy)
        probs = np.exp(logp)
        probs /= probs.sum(axis=1, keepdims=True)
        row = 0
        for ss in substeps[start:end]:
            m = ss.sg.n_members()
            out.append(probs[row : row + m])
            row += m
        start = end
    return out


def _policy_pass(
    transitions: Sequence[Transition],
    coeffs: Sequence[np.ndarray],
    policy: NetParams,
    row_budget: int = ROW_BUDGET,
) -> Params:
    """Gradient of sum over (sub-graph, member) of coeff * ln pi(executed)."""
    grads = zeros_like_params(policy)
    start = 0
    while start < len(transitions):
        end = start
        rows = 0
        while end < len(transitions) and (
            end == start or rows + transitions[end].step.sg.n_members() <= row_budget
        ):
            rows += transitions[end].step.sg.n_members()
            end += 1
        batch = batch_subgraphs([tr.step.sg for tr in transitions[start:end]])
        logp, trace = policy_logprobs(batch, policy, record=True)
        seed = np.zeros_like(logp)
        row = 0
        for tr, c in zip(transitions[start:end], coeffs[start:end]):
            m = tr.step.sg.n_members()
            seed[row + np.arange(m), tr.step.executed] += c
            row += m
        add_scaled_(grads, backward(trace, seed))
        start = end
    return grads


def _critic_pass(
    transitions: Sequence[Transition],
    coeffs: Sequence[float],
    critic: NetParams,
    row_budget: int = ROW_BUDGET,
) -> Params:
    """Gradient of sum over sub-graphs of coeff * q(sg, executed joint)."""
    grads = zeros_like_params(critic)
    start = 0
    while start < len(transitions):
        end = start
        rows = 0
        while end < len(transitions) and (
            end == start or rows + transitions[end].step.sg.n_members() <= row_budget
        ):
            rows += transitions[end].step.sg.n_members()
            end += 1
        batch = batch_subgraphs(
            [tr.step.sg for tr in transitions[start:end]],
            joints=[tr.step.executed for tr in transitions[start:end]],
        )
        _, trace = critic_values(batch, critic, record=True)
        add_scaled_(grads, backward(trace, np.asarray(coeffs[start:end], dtype=np.float64)))
        start = end
    return grads


def ac_episode_grads(
    transitions: Sequence[Transition],
    nets: TeamNets,
    tcfg: TrainerConfig,
    fresh_probs: bool = False,
) -> tuple[Params, Params]:
    """Actor and critic gradients of one episode's transitions for one team.

    For every transition and member j: v is the critic baseline on the
    current sub-graph (member j's action swept, others fixed at the joint
    the world executed), v' the same on the successor sub-graph with the
    next step's executed joint (zero when the agent or episode terminated;
    the raw successor value when j drifted out of the successor sub-graph),
    and delta = R + gamma*v' - v weights both the actor's log-probability
    gradient and the critic's value gradient. Gradients attach to the
    executed ensemble actions: the per-sub-graph draws recorded at rollout
    time carry no reward credit of their own.
    """
    assert nets.critic is not None
    policy, critic = nets.policy, nets.critic
    if not transitions:
        return zeros_like_params(policy), zeros_like_params(critic)

    if fresh_probs:
        cur = _substep_probs([tr.step for tr in transitions], policy)
        nxt_list = [tr.next for tr in transitions if tr.next is not None]
        nxt_fresh = _substep_probs(nxt_list, policy)
        nxt_iter = iter(nxt_fresh)
        probs_cur = {id(tr.step): p for tr, p in zip(transitions, cur)}
        probs_nxt = {id(ss): next(nxt_iter) for ss in nxt_list}
    else:
        probs_cur = {id(tr.step): tr.step.probs for tr in transitions}
        probs_nxt = {
            id(tr.next): tr.next.probs for tr in transitions if tr.next is not None
        }

    v_sweep = sweep_values([(tr.step.sg, tr.step.executed) for tr in transitions], critic)
    with_next = [k for k, tr in enumerate(transitions) if tr.next is not None]
    nxt_entries = [(transitions[k].next.sg, transitions[k].next.executed) for k in with_next]
    n_sweep = sweep_values(nxt_entries, critic)
    n_raw = chunked_critic_values(nxt_entries, critic) if nxt_entries else np.empty(0)
    nmap = {k: i for i, k in enumerate(with_next)}

    deltas: list[np.ndarray] = []
    for k, tr in enumerate(transitions):
        probs = probs_cur[id(tr.step)]
        v = (probs * v_sweep[k]).sum(axis=1)
        if tr.next is None:
            vn = np.zeros_like(v)
        else:
            i = nmap[k]
            vn_members = (probs_nxt[id(tr.next)] * n_sweep[i]).sum(axis=1)
            slot_of = {int(mid): s for s, mid in enumerate(tr.next.sg.members)}
            vn = np.array(
                [
                    vn_members[slot_of[int(mid)]] if int(mid) in slot_of else n_raw[i]
                    for mid in tr.step.sg.members
                ]
            )
        deltas.append(tr.step.reward + tcfg.gamma * vn - v)

    pol = _policy_pass(transitions, deltas, policy)
    cri = _critic_pass(transitions, [float(d.sum()) for d in deltas], critic)
    return pol, cri


def graph_pg_episode_grads(
    transitions: Sequence[Transition],
    nets: TeamNets,
    tcfg: TrainerConfig,
) -> Params:
    """Policy gradient with the centre's return-to-go as the coefficient."""
    if not transitions:
        return zeros_like_params(nets.policy)
    by_centre: dict[int, list[Transition]] = {}
    for tr in transitions:
        by_centre.setdefault(tr.centre, []).append(tr)
    g_of: dict[tuple[int, int], float] = {}
    for centre, trs in by_centre.items():
        trs.sort(key=lambda tr: tr.t)
        g = returns_to_go(np.array([tr.step.reward for tr in trs]), tcfg.gamma)
        for tr, gt in zip(trs, g):
            g_of[(tr.t, centre)] = float(gt)
    coeffs = [
        np.full(tr.step.sg.n_members(), g_of[(tr.t, tr.centre)]) for tr in transitions
    ]
    return _policy_pass(transitions, coeffs, nets.policy)


def vanilla_episode_grads(
    flats: Sequence[FlatStep],
    nets: TeamNets,
    tcfg: TrainerConfig,
) -> Params:
    """REINFORCE on the per-agent perceptron: G_t * grad ln pi(a_t | x_t)."""
    grads = zeros_like_params(nets.policy)
    if not flats:
        return grads
    rewards_of: dict[int, list[float]] = {}
    for fs in flats:
        for aid, r in zip(fs.ids, fs.rewards):
            rewards_of.setdefault(int(aid), []).append(float(r))
    g_iters = {
        aid: iter(returns_to_go(np.array(rs), tcfg.gamma)) for aid, rs in rewards_of.items()
    }
    feats = np.concatenate([fs.feats for fs in flats], axis=0)
    sampled = np.concatenate([fs.sampled for fs in flats])
    coeff = np.concatenate(
        [[float(next(g_iters[int(aid)])) for aid in fs.ids] for fs in flats]
    )
    logp, trace = mlp_logprobs(feats, nets.policy, record=True)
    seed = np.zeros_like(logp)
    seed[np.arange(len(sampled)), sampled] = coeff
    add_scaled_(grads, backward(trace, seed))
    return grads


# -- batch metrics and the trainer -------------------------------------------


@dataclass
class BatchMetrics:
    batch: int
    team: int
    mean_reward: float
    win_rate: Optional[float]
    lr: float
    seconds: float
    mean_alive: float
    subgraph_count: float
    mean_subgraph_size: float


class Trainer:
    """Owns per-team networks and advances them batch by batch.

    Episode e of batch b always sees the rng streams derived from
    (seed, b, e), so a sequential run and a thread-pooled run produce
    identical parameters and metrics; only wall-clock differs.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        trainer: TrainerConfig,
        network: NetConfig,
        seed: int = 0,
        parallelism: int = 1,
        world_factory: Optional[Callable[[int, int], GridWorld]] = None,
    ):
        trainer.validate()
        network.validate()
        if parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        probe = new_scenario(scenario, 0)
        self.scenario = scenario
        self.tcfg = trainer
        self.ncfg = network
        self.seed = seed
        self.parallelism = parallelism
        self.teams = sorted({a.team for a in probe.agents})
        sizes = scenario.team_sizes()
        self._team_starts = np.cumsum([0] + sizes)
        self.nets = {
            t: new_team_nets(
                trainer,
                network,
                np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, t))),
            )
            for t in self.teams
        }
        self.batch_index = 0
        self._world_factory = world_factory

    def team_of(self, agent_id: int) -> int:
        return int(np.searchsorted(self._team_starts, agent_id, side="right") - 1)

    def _world(self, batch: int, ep: int) -> GridWorld:
        if self._world_factory is not None:
            return self._world_factory(batch, ep)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(1, batch, ep))
        return new_scenario(self.scenario, int(ss.generate_state(1)[0]))

    def _rng(self, batch: int, ep: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(2, batch, ep))
        )

    def _episode(self, batch: int, ep: int) -> EpisodeResult:
        world = self._world(batch, ep)
        rng = self._rng(batch, ep)
        if self.tcfg.algorithm == "vanilla-pg":
            return rollout_flat(world, self.nets, rng, collect=True)
        return rollout_graph(world, self.nets, self.tcfg, self.ncfg, rng, collect=True)

    def _episode_per_step(self, batch: int, ep: int) -> EpisodeResult:
        """Alg-style online mode: each step's transitions update immediately
        once the successor step has been sampled (values need its joint)."""
        world = self._world(batch, ep)
        rng = self._rng(batch, ep)
        agent_returns: dict[int, float] = {}
        n_steps = n_sub = size_sum = 0
        prev: Optional[StepData] = None
        prev_t = -1
        while not world.finished:
            sd = _graph_step(world, self.nets, self.tcfg, self.ncfg, rng, "sample", frozenset())
            n_steps += 1
            for ss in sd.per_centre.values():
                n_sub += 1
                size_sum += ss.sg.n_members()
            for aid, r in sd.outcome.rewards.items():
                agent_returns[aid] = agent_returns.get(aid, 0.0) + r
            if prev is not None:
                self._apply_step_updates(prev, sd, prev_t)
            prev, prev_t = sd, prev_t + 1
        if prev is not None:
            self._apply_step_updates(prev, None, prev_t)
        stats = _episode_stats(world, agent_returns, n_steps, n_sub, size_sum)
        return EpisodeResult(steps=None, flat=None, stats=stats)

    def _apply_step_updates(self, sd: StepData, nxt: Optional[StepData], t: int) -> None:
        for team in self.teams:
            transitions = [
                Transition(step=ss, next=nxt.per_centre.get(c) if nxt else None, t=t)
                for c, ss in sd.per_centre.items()
                if self.team_of(c) == team
            ]
            if not transitions:
                continue
            nets = self.nets[team]
            pol, cri = ac_episode_grads(transitions, nets, self.tcfg, fresh_probs=True)
            scale_(pol, -1.0)
            scale_(cri, -1.0)
            adam_step(nets.policy, pol, nets.adam_policy)
            assert nets.critic is not None and nets.adam_critic is not None
            adam_step(nets.critic, cri, nets.adam_critic)

    def _run_episodes(self, count: int) -> list[EpisodeResult]:
        b = self.batch_index
        if self.parallelism == 1:
            return [self._episode(b, e) for e in range(count)]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            futures = [pool.submit(self._episode, b, e) for e in range(count)]
            return [f.result() for f in futures]  # merged in episode order

    def train_batch(self) -> list[BatchMetrics]:
        t0 = time.perf_counter()
        n = self.tcfg.batch_episodes
        if self.tcfg.per_step_updates:
            results = [self._episode_per_step(self.batch_index, e) for e in range(n)]
        else:
            results = self._run_episodes(n)
            self._apply_batch_updates(results)
        seconds = time.perf_counter() - t0
        rows = []
        for team in self.teams:
            nets = self.nets[team]
            mean_reward = float(np.mean([ep.stats.returns[team] for ep in results]))
            wins = [ep.stats.wins.get(team) for ep in results]
            win_rate = float(np.mean(wins)) if all(w is not None for w in wins) else None
            new_lr = plateau_update(nets.sched, mean_reward)
            nets.adam_policy.lr = new_lr
            if nets.adam_critic is not None:
                nets.adam_critic.lr = new_lr * nets.lr_ratio
            subg = float(np.mean([ep.stats.subgraphs for ep in results]))
            total_sub = sum(ep.stats.subgraphs for ep in results)
            total_size = sum(ep.stats.subgraph_size_sum for ep in results)
            rows.append(
                BatchMetrics(
                    batch=self.batch_index,
                    team=team,
                    mean_reward=mean_reward,
                    win_rate=win_rate,
                    lr=new_lr,
                    seconds=seconds,
                    mean_alive=float(np.mean([ep.stats.alive_end[team] for ep in results])),
                    subgraph_count=subg,
                    mean_subgraph_size=(total_size / total_sub) if total_sub else 0.0,
                )
            )
        self.batch_index += 1
        return rows

    def _apply_batch_updates(self, results: Sequence[EpisodeResult]) -> None:
        inv = -1.0 / len(results)
        for team in self.teams:
            nets = self.nets[team]
            acc_p = zeros_like_params(nets.policy)
            acc_c = zeros_like_params(nets.critic) if nets.critic is not None else None
            for ep in results:
                if self.tcfg.algorithm == "vanilla-pg":
                    assert ep.flat is not None
                    add_scaled_(acc_p, vanilla_episode_grads(ep.flat.get(team, []), nets, self.tcfg))
                    continue
                assert ep.steps is not None
                transitions = team_transitions(
                    ep.steps, {a: self.team_of(a) for a in self._all_ids()}, team
                )
                if self.tcfg.algorithm == "graph-ac":
                    pol, cri = ac_episode_grads(transitions, nets, self.tcfg)
                    add_scaled_(acc_p, pol)
                    assert acc_c is not None
                    add_scaled_(acc_c, cri)
                else:
                    add_scaled_(acc_p, graph_pg_episode_grads(transitions, nets, self.tcfg))
            scale_(acc_p, inv)
            adam_step(nets.policy, acc_p, nets.adam_policy)
            if acc_c is not None:
                scale_(acc_c, inv)
                assert nets.adam_critic is not None
                adam_step(nets.critic, acc_c, nets.adam_critic)

    def _all_ids(self) -> range:
        return range(int(self._team_starts[-1]))

    def train(
        self,
        batches: int,
        on_batch: Optional[Callable[[list[BatchMetrics]], None]] = None,
    ) -> list[BatchMetrics]:
        out: list[BatchMetrics] = []
        for _ in range(batches):
            rows = self.train_batch()
            out.extend(rows)
            if on_batch is not None:
                on_batch(rows)
        return out


def evaluate(
    scenario: ScenarioConfig,
    nets: Mapping[int, TeamNets],
    tcfg: TrainerConfig,
    ncfg: NetConfig,
    episodes: int,
    seed: int = 0,
    mode: str = "greedy",
    random_teams: frozenset[int] = frozenset(),
) -> dict[int, dict[str, Optional[float]]]:
    """Frozen-policy evaluation; returns per-team summary statistics."""
    teams = sorted(nets)
    stats: list[EpisodeStats] = []
    vanilla = isinstance(nets[teams[0]].policy, MlpParams)
    for e in range(episodes):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(3, e))
        world = new_scenario(scenario, int(ss.generate_state(1)[0]))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4, e)))
        if vanilla:
            res = rollout_flat(world, nets, rng, collect=False, mode=mode, random_teams=random_teams)
        else:
            res = rollout_graph(
                world, nets, tcfg, ncfg, rng, collect=False, mode=mode, random_teams=random_teams
            )
        stats.append(res.stats)
    out: dict[int, dict[str, Optional[float]]] = {}
    for t in teams:
        wins = [s.wins.get(t) for s in stats]
        out[t] = {
            "mean_reward": float(np.mean([s.returns[t] for s in stats])),
            "win_rate": float(np.mean(wins)) if all(w is not None for w in wins) else None,
            "mean_alive": float(np.mean([s.alive_end[t] for s in stats])),
            "mean_steps": float(np.mean([s.steps for s in stats])),
        }
    return out
