"""Rollouts, episode gradients, the batch trainer, evaluation."""

import copy

import numpy as np
import pytest

from gridmarl import ConfigError, Scenario, ScenarioConfig, new_scenario
from gridmarl.nn import (
    add_scaled_,
    adam_step,
    backward,
    batch_subgraphs,
    critic_forward,
    max_abs,
    mlp_logprobs,
    policy_logprobs,
    scale_,
    zeros_like_params,
)
from gridmarl.rl import (
    NetConfig,
    Trainer,
    TrainerConfig,
    baseline,
    evaluate,
    new_team_nets,
    returns_to_go,
    rollout_flat,
    rollout_graph,
)
from gridmarl.rl.trainer import (
    ac_episode_grads,
    chunked_critic_values,
    graph_pg_episode_grads,
    sweep_values,
    team_transitions,
    vanilla_episode_grads,
)


def battle_cfg(**kw):
    base = dict(
        scenario=Scenario.BATTLE, width=6, height=6, agents=2, episode_limit=6
    )
    base.update(kw)
    return ScenarioConfig(**base)


def jungle_cfg(**kw):
    base = dict(
        scenario=Scenario.JUNGLE, width=6, height=6, agents=3, foods=2, episode_limit=6
    )
    base.update(kw)
    return ScenarioConfig(**base)


def tiny_net_cfg():
    return NetConfig(hidden=6, rounds=1)


def make_nets(tcfg, ncfg, teams=(0, 1), seed=0):
    rng = np.random.default_rng(seed)
    return {t: new_team_nets(tcfg, ncfg, rng) for t in teams}


def graph_episode(scenario_cfg, tcfg, ncfg, nets, seed=0):
    world = new_scenario(scenario_cfg, seed)
    rng = np.random.default_rng(seed + 100)
    return world, rollout_graph(world, nets, tcfg, ncfg, rng, collect=True)


class TestRollout:
    def test_records_are_consistent(self):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2, batch_episodes=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg)
        world, res = graph_episode(battle_cfg(), tcfg, ncfg, nets)
        assert world.finished
        assert res.stats.steps == len(res.steps)
        for sd in res.steps:
            for centre, ss in sd.per_centre.items():
                assert ss.sg.centre == centre
                m = ss.sg.n_members()
                assert ss.probs.shape == (m, 5)
                np.testing.assert_allclose(ss.probs.sum(axis=1), 1.0, atol=1e-12)
                assert ss.sampled.shape == (m,) and ss.executed.shape == (m,)
                assert np.all((ss.sampled >= 0) & (ss.sampled < 5))
                assert np.all((ss.executed >= 0) & (ss.executed < 5))
                assert ss.reward == sd.outcome.rewards[centre]

    def test_returns_accumulate_rewards(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=2, batch_episodes=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg)
        world, res = graph_episode(jungle_cfg(), tcfg, ncfg, nets, seed=3)
        totals = {}
        for sd in res.steps:
            for aid, r in sd.outcome.rewards.items():
                totals[aid] = totals.get(aid, 0.0) + r
        want = np.mean([totals.get(a.id, 0.0) for a in world.agents])
        assert res.stats.returns[0] == pytest.approx(want)

    def test_flat_rollout_rows_cover_team(self):
        tcfg = TrainerConfig(algorithm="vanilla-pg", batch_episodes=1)
        nets = make_nets(tcfg, tiny_net_cfg())
        world = new_scenario(battle_cfg(), 1)
        res = rollout_flat(world, nets, np.random.default_rng(5), collect=True)
        assert set(res.flat) == {0, 1}
        for team, steps in res.flat.items():
            for fs in steps:
                assert len(fs.ids) == len(fs.sampled) == len(fs.rewards) == fs.feats.shape[0]
                assert fs.feats.shape[1] == 47

    def test_win_rates_by_scenario(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg)
        _, res = graph_episode(jungle_cfg(), tcfg, ncfg, nets)
        assert res.stats.wins == {}
        _, res = graph_episode(battle_cfg(), tcfg, ncfg, nets)
        assert set(res.stats.wins) == {0, 1}


class TestTransitions:
    def test_successor_linkage(self):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg)
        world, res = graph_episode(battle_cfg(episode_limit=5), tcfg, ncfg, nets, seed=7)
        team_of = {a.id: a.team for a in world.agents}
        for team in (0, 1):
            trs = team_transitions(res.steps, team_of, team)
            assert all(team_of[tr.centre] == team for tr in trs)
            by_key = {(tr.t, tr.centre): tr for tr in trs}
            for tr in trs:
                if tr.t + 1 < len(res.steps):
                    nxt = res.steps[tr.t + 1].per_centre.get(tr.centre)
                    assert tr.next is nxt  # same object, or both None
                else:
                    assert tr.next is None
            # one transition per (step, living centre) of the team
            want = sum(
                1
                for sd in res.steps
                for c in sd.per_centre
                if team_of[c] == team
            )
            assert len(by_key) == len(trs) == want


class TestSweeps:
    def build(self, seed=0):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, seed=seed)
        _, res = graph_episode(battle_cfg(), tcfg, ncfg, nets, seed=seed)
        trs = []
        team_of_map = {}
        world = new_scenario(battle_cfg(), seed)
        for a in world.agents:
            team_of_map[a.id] = a.team
        for team in (0, 1):
            trs += team_transitions(res.steps, team_of_map, team)
        return nets, trs

    def test_sweep_matches_single_forwards(self):
        nets, trs = self.build()
        critic = nets[0].critic
        entries = [(tr.step.sg, tr.step.executed) for tr in trs[:6]]
        got = sweep_values(entries, critic)
        for (sg, base), table in zip(entries, got):
            assert table.shape == (sg.n_members(), 5)
            for j in range(sg.n_members()):
                for a in range(5):
                    swept = np.asarray(base).copy()
                    swept[j] = a
                    assert table[j, a] == pytest.approx(
                        critic_forward(sg, swept, critic), abs=1e-9
                    )

    def test_sweep_chunking_changes_nothing(self):
        nets, trs = self.build(seed=1)
        critic = nets[0].critic
        entries = [(tr.step.sg, tr.step.executed) for tr in trs]
        whole = sweep_values(entries, critic)
        tiny = sweep_values(entries, critic, row_budget=8)
        assert len(whole) == len(tiny)
        for a, b in zip(whole, tiny):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_chunked_values_match(self):
        nets, trs = self.build(seed=2)
        critic = nets[0].critic
        entries = [(tr.step.sg, tr.step.executed) for tr in trs]
        got = chunked_critic_values(entries, critic, row_budget=4)
        for v, (sg, joint) in zip(got, entries):
            assert v == pytest.approx(critic_forward(sg, joint, critic), abs=1e-12)


def naive_ac_grads(transitions, nets, tcfg):
    """Transition-by-transition recomputation with the scalar primitives."""
    policy, critic = nets.policy, nets.critic
    acc_p = zeros_like_params(policy)
    acc_c = zeros_like_params(critic)
    for tr in transitions:
        sg = tr.step.sg
        m = sg.n_members()
        deltas = np.zeros(m)
        for j, mid in enumerate(sg.members):
            v = baseline(sg, tr.step.executed, int(mid), policy, critic)
            if tr.next is None:
                vn = 0.0
            elif int(mid) in [int(x) for x in tr.next.sg.members]:
                vn = baseline(tr.next.sg, tr.next.executed, int(mid), policy, critic)
            else:
                vn = critic_forward(tr.next.sg, tr.next.executed, critic)
            deltas[j] = tr.step.reward + tcfg.gamma * vn - v
        _, trace = policy_logprobs(batch_subgraphs([sg]), policy, record=True)
        seed = np.zeros((m, 5))
        seed[np.arange(m), tr.step.executed] = deltas
        add_scaled_(acc_p, backward(trace, seed))
        _, trace = critic_values_recorded(sg, tr.step.executed, critic)
        add_scaled_(acc_c, backward(trace, np.array([deltas.sum()])))
    return acc_p, acc_c


def critic_values_recorded(sg, joint, critic):
    from gridmarl.nn import critic_values

    return critic_values(batch_subgraphs([sg], joints=[joint]), critic, record=True)


def params_allclose(a, b, atol=1e-9):
    for (_, x), (_, y) in zip(a.layers(), b.layers()):
        np.testing.assert_allclose(x.w, y.w, atol=atol)
        np.testing.assert_allclose(x.b, y.b, atol=atol)


class TestEpisodeGrads:
    def setup_ac(self, seed=0):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2, gamma=0.9)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, seed=seed)
        world, res = graph_episode(battle_cfg(), tcfg, ncfg, nets, seed=seed)
        team_of = {a.id: a.team for a in world.agents}
        return tcfg, nets, res, team_of

    def test_ac_matches_naive(self):
        tcfg, nets, res, team_of = self.setup_ac()
        for team in (0, 1):
            trs = team_transitions(res.steps, team_of, team)
            pol, cri = ac_episode_grads(trs, nets[team], tcfg)
            want_p, want_c = naive_ac_grads(trs, nets[team], tcfg)
            params_allclose(pol, want_p)
            params_allclose(cri, want_c)

    def test_ac_stored_vs_fresh_probs_agree_before_updates(self):
        # nothing has stepped the optimizer, so stored and recomputed
        # distributions coincide
        tcfg, nets, res, team_of = self.setup_ac(seed=4)
        trs = team_transitions(res.steps, team_of, 0)
        a_p, a_c = ac_episode_grads(trs, nets[0], tcfg)
        b_p, b_c = ac_episode_grads(trs, nets[0], tcfg, fresh_probs=True)
        params_allclose(a_p, b_p)
        params_allclose(a_c, b_c)

    def test_ac_empty_transitions(self):
        tcfg = TrainerConfig(algorithm="graph-ac")
        nets = make_nets(tcfg, tiny_net_cfg())
        pol, cri = ac_episode_grads([], nets[0], tcfg)
        assert max_abs(pol) == 0.0 and max_abs(cri) == 0.0

    def test_graph_pg_matches_naive(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=2, gamma=0.95)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, seed=5)
        world, res = graph_episode(jungle_cfg(), tcfg, ncfg, nets, seed=5)
        team_of = {a.id: a.team for a in world.agents}
        trs = team_transitions(res.steps, team_of, 0)
        got = graph_pg_episode_grads(trs, nets[0], tcfg)

        # naive: per centre, G_t from its reward stream; every member row of
        # the sub-graph uses the centre's return-to-go
        acc = zeros_like_params(nets[0].policy)
        by_centre = {}
        for tr in trs:
            by_centre.setdefault(tr.centre, []).append(tr)
        for centre, seq in by_centre.items():
            seq.sort(key=lambda tr: tr.t)
            g = returns_to_go(np.array([tr.step.reward for tr in seq]), tcfg.gamma)
            for tr, gt in zip(seq, g):
                m = tr.step.sg.n_members()
                _, trace = policy_logprobs(
                    batch_subgraphs([tr.step.sg]), nets[0].policy, record=True
                )
                seed = np.zeros((m, 5))
                seed[np.arange(m), tr.step.executed] = gt
                add_scaled_(acc, backward(trace, seed))
        params_allclose(got, acc)

    def test_vanilla_matches_naive(self):
        tcfg = TrainerConfig(algorithm="vanilla-pg", gamma=0.9)
        nets = make_nets(tcfg, tiny_net_cfg(), seed=6)
        world = new_scenario(battle_cfg(), 6)
        res = rollout_flat(world, nets, np.random.default_rng(6), collect=True)
        flats = res.flat[0]
        got = vanilla_episode_grads(flats, nets[0], tcfg)

        acc = zeros_like_params(nets[0].policy)
        streams = {}
        for fs in flats:
            for aid, r in zip(fs.ids, fs.rewards):
                streams.setdefault(int(aid), []).append(float(r))
        gmap = {aid: returns_to_go(np.array(rs), tcfg.gamma) for aid, rs in streams.items()}
        seen = {aid: 0 for aid in gmap}
        for fs in flats:
            _, trace = mlp_logprobs(fs.feats, nets[0].policy, record=True)
            seed = np.zeros((len(fs.ids), 5))
            for k, aid in enumerate(fs.ids):
                seed[k, fs.sampled[k]] = gmap[int(aid)][seen[int(aid)]]
                seen[int(aid)] += 1
            add_scaled_(acc, backward(trace, seed))
        params_allclose(got, acc)

    def test_vanilla_empty(self):
        tcfg = TrainerConfig(algorithm="vanilla-pg")
        nets = make_nets(tcfg, tiny_net_cfg())
        assert max_abs(vanilla_episode_grads([], nets[0], tcfg)) == 0.0


class TestTrainer:
    def test_batch_update_replays_by_hand(self):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2, batch_episodes=2, gamma=0.9)
        ncfg = tiny_net_cfg()
        tr = Trainer(battle_cfg(), tcfg, ncfg, seed=11)
        frozen = copy.deepcopy(tr.nets)
        tr.train_batch()

        # replay: same worlds, same rngs, same update arithmetic
        replay = Trainer(battle_cfg(), tcfg, ncfg, seed=11)
        results = [replay._episode(0, e) for e in range(2)]
        team_of = {a: replay.team_of(a) for a in replay._all_ids()}
        for team in replay.teams:
            nets = replay.nets[team]
            acc_p = zeros_like_params(nets.policy)
            acc_c = zeros_like_params(nets.critic)
            for ep in results:
                trs = team_transitions(ep.steps, team_of, team)
                p, c = ac_episode_grads(trs, nets, tcfg)
                add_scaled_(acc_p, p)
                add_scaled_(acc_c, c)
            scale_(acc_p, -0.5)
            scale_(acc_c, -0.5)
            adam_step(nets.policy, acc_p, nets.adam_policy)
            adam_step(nets.critic, acc_c, nets.adam_critic)
        for team in replay.teams:
            params_allclose(tr.nets[team].policy, replay.nets[team].policy, atol=1e-12)
            params_allclose(tr.nets[team].critic, replay.nets[team].critic, atol=1e-12)
            # sanity: parameters actually moved
            diff = 0.0
            for (_, a), (_, b) in zip(
                tr.nets[team].policy.layers(), frozen[team].policy.layers()
            ):
                diff = max(diff, float(np.max(np.abs(a.w - b.w))))
            assert diff > 0.0

    def test_parallel_matches_sequential(self):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=2, batch_episodes=4)
        ncfg = tiny_net_cfg()
        seq = Trainer(battle_cfg(), tcfg, ncfg, seed=12, parallelism=1)
        par = Trainer(battle_cfg(), tcfg, ncfg, seed=12, parallelism=4)
        m1 = seq.train_batch()
        m2 = par.train_batch()
        for team in seq.teams:
            params_allclose(seq.nets[team].policy, par.nets[team].policy, atol=0.0)
            params_allclose(seq.nets[team].critic, par.nets[team].critic, atol=0.0)
        for a, b in zip(m1, m2):
            assert a.mean_reward == b.mean_reward and a.win_rate == b.win_rate

    def test_metrics_rows(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1, batch_episodes=2)
        tr = Trainer(jungle_cfg(), tcfg, tiny_net_cfg(), seed=13)
        rows = tr.train(2)
        assert [r.batch for r in rows] == [0, 1]
        assert all(r.team == 0 for r in rows)
        assert all(r.win_rate is None for r in rows)  # jungle has no winner
        assert all(r.seconds >= 0.0 for r in rows)
        assert all(r.subgraph_count > 0 for r in rows)
        assert all(r.mean_subgraph_size >= 1.0 for r in rows)
        assert tr.batch_index == 2

    def test_battle_metrics_have_win_rate(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1, batch_episodes=2)
        tr = Trainer(battle_cfg(), tcfg, tiny_net_cfg(), seed=14)
        rows = tr.train_batch()
        assert {r.team for r in rows} == {0, 1}
        assert all(r.win_rate is not None and 0.0 <= r.win_rate <= 1.0 for r in rows)

    def test_per_step_mode_updates_many_times(self):
        tcfg = TrainerConfig(
            algorithm="graph-ac", depth=1, batch_episodes=1, per_step_updates=True
        )
        tr = Trainer(battle_cfg(), tcfg, tiny_net_cfg(), seed=15)
        tr.train_batch()
        # one Adam step per world tick (minus the sampling delay), far more
        # than the single step batch mode would take
        assert tr.nets[0].policy.version > 1

    def test_team_of_mapping(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1)
        tr = Trainer(battle_cfg(agents=3), tcfg, tiny_net_cfg())
        world = new_scenario(battle_cfg(agents=3), 0)
        for a in world.agents:
            assert tr.team_of(a.id) == a.team

    def test_config_validation(self):
        good = TrainerConfig()
        good.validate()
        with pytest.raises(ConfigError):
            TrainerConfig(algorithm="dqn").validate()
        with pytest.raises(ConfigError):
            TrainerConfig(gamma=0.0).validate()
        with pytest.raises(ConfigError):
            TrainerConfig(gamma=1.1).validate()
        with pytest.raises(ConfigError):
            TrainerConfig(lr_policy=0.0).validate()
        with pytest.raises(ConfigError):
            TrainerConfig(depth=0).validate()
        with pytest.raises(ConfigError):
            TrainerConfig(batch_episodes=0).validate()
        with pytest.raises(ConfigError):
            TrainerConfig(algorithm="graph-pg", per_step_updates=True).validate()
        with pytest.raises(ConfigError):
            NetConfig(hidden=0).validate()
        with pytest.raises(ConfigError):
            NetConfig(delta_d=0.0).validate()
        with pytest.raises(ConfigError):
            Trainer(battle_cfg(), TrainerConfig(), NetConfig(), parallelism=0)

    def test_lr_schedule_flows_into_adam(self):
        tcfg = TrainerConfig(algorithm="graph-ac", depth=1, batch_episodes=1, lr_critic=0.02)
        tr = Trainer(battle_cfg(), tcfg, tiny_net_cfg(), seed=16)
        tr.nets[0].sched.patience = 1
        tr.nets[0].sched.best = 1e9  # force a stall
        tr.train_batch()
        assert tr.nets[0].adam_policy.lr == pytest.approx(0.01 * 0.95)
        assert tr.nets[0].adam_critic.lr == pytest.approx(0.02 * 0.95)


class TestEvaluate:
    def test_deterministic(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, seed=17)
        a = evaluate(battle_cfg(), nets, tcfg, ncfg, episodes=3, seed=5)
        b = evaluate(battle_cfg(), nets, tcfg, ncfg, episodes=3, seed=5)
        assert a == b
        assert set(a) == {0, 1}
        for row in a.values():
            assert set(row) == {"mean_reward", "win_rate", "mean_alive", "mean_steps"}

    def test_vanilla_dispatch(self):
        tcfg = TrainerConfig(algorithm="vanilla-pg")
        nets = make_nets(tcfg, tiny_net_cfg(), seed=18)
        out = evaluate(battle_cfg(), nets, tcfg, tiny_net_cfg(), episodes=2, seed=6)
        assert out[0]["mean_steps"] > 0

    def test_random_opponent_mode(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, seed=19)
        out = evaluate(
            battle_cfg(), nets, tcfg, ncfg, episodes=2, seed=7, random_teams=frozenset({1})
        )
        assert out[1]["win_rate"] is not None

    def test_jungle_win_rate_is_none(self):
        tcfg = TrainerConfig(algorithm="graph-pg", depth=1)
        ncfg = tiny_net_cfg()
        nets = make_nets(tcfg, ncfg, teams=(0,), seed=20)
        out = evaluate(jungle_cfg(), nets, tcfg, ncfg, episodes=2, seed=8)
        assert out[0]["win_rate"] is None
