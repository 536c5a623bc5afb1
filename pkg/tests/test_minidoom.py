"""Simulator contract: map parsing, shaped rewards, dynamics, rendering."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unrealdc import minidoom as md
from unrealdc.minidoom import (
    ACTION_PROFILE,
    NAVIGATION_PROFILE,
    EnvAction,
    MapError,
    TerminalStateError,
)

MINIMAL = "###\n#S#\n###"

ARENA = """\
#######
#S....#
#.....#
#..M..#
#....O#
#.....#
#######
"""


def arena(limit=50):
    return md.load_map(ARENA, episode_step_limit=limit)


class TestLoadMap:
    def test_minimal_legal_map(self):
        spec = md.load_map(MINIMAL)
        assert (spec.width, spec.height) == (3, 3)
        assert spec.agent_spawns == ((1, 1),)
        assert spec.monster_spawns == ()
        assert spec.object_spawns == ()

    def test_spawn_characters_register_coordinates(self):
        spec = md.load_map("#####\n#SMO#\n#####")
        assert spec.agent_spawns == ((1, 1),)
        assert spec.monster_spawns == ((1, 2),)
        assert spec.object_spawns == ((1, 3),)
        # spawn characters imply floor
        assert not spec.walls[1, 1] and not spec.walls[1, 2] and not spec.walls[1, 3]

    def test_unwalled_border_rejected(self):
        with pytest.raises(MapError, match="unwalled border"):
            md.load_map("###\n#S.\n###")

    def test_error_names_line_and_column(self):
        with pytest.raises(MapError, match="line 2, column 3"):
            md.load_map("###\n#SX\n###".replace("X", "?"))

    def test_non_rectangular_rejected(self):
        with pytest.raises(MapError, match="non-rectangular"):
            md.load_map("####\n#S#\n####")

    def test_no_agent_spawn_rejected(self):
        with pytest.raises(MapError, match="no agent spawn"):
            md.load_map("###\n#.#\n###")

    def test_trailing_newline_optional(self):
        assert md.load_map(MINIMAL).width == md.load_map(MINIMAL + "\n").width


class TestReset:
    def test_same_seed_bitwise_identical(self):
        spec = arena()
        s1, o1 = md.reset(spec, 7, obs_dims=(12, 12))
        s2, o2 = md.reset(spec, 7, obs_dims=(12, 12))
        assert s1 == s2
        assert np.array_equal(o1, o2)

    def test_single_spawn_forces_placement(self):
        spec = md.load_map(MINIMAL)
        for seed in range(5):
            state, _ = md.reset(spec, seed)
            assert state.agent_cell == (1, 1)

    def test_object_count_matches_spawns(self):
        spec = md.load_map("#####\n#SOO#\n#O..#\n#####")
        state, _ = md.reset(spec, 3)
        assert len(state.objects) == 3

    def test_initial_state_counters(self):
        state, _ = md.reset(arena(), 0)
        assert state.tick == 0
        assert state.health == md.AGENT_MAX_HEALTH
        assert not state.terminal


def state_with(spec, agent_cell, heading, monsters=(), objects=(), seed=0):
    base, _ = md.reset(spec, seed, obs_dims=(12, 12))
    return md.WorldState(
        map=base.map,
        agent_cell=agent_cell,
        heading=heading,
        health=base.health,
        monsters=tuple(md.Monster(cell=c) for c in monsters),
        objects=frozenset(objects),
        tick=0,
        rng_state=base.rng_state,
        obs_dims=base.obs_dims,
    )


class TestStepRewards:
    def test_fire_kill_plus_one(self):
        # monster straight ahead on the facing ray
        spec = arena()
        state = state_with(spec, (3, 1), 1, monsters=[(3, 4)])
        outcome, after = md.step(state, EnvAction.FIRE, ACTION_PROFILE)
        assert outcome.events == {"kill": 1}
        assert outcome.reward == pytest.approx(1.0)
        assert all(m.health == 0 for m in after.monsters)

    def test_object_pickup_navigation_half(self):
        spec = arena()
        state = state_with(spec, (4, 4), 1, objects=[(4, 5)])
        outcome, _ = md.step(state, EnvAction.MOVE_FORWARD, NAVIGATION_PROFILE)
        assert outcome.events == {"object_gathered": 1}
        assert outcome.reward == pytest.approx(0.5)

    def test_missed_shot_plus_monster_hit(self):
        # fire down an empty ray while standing next to a monster with no cooldown
        spec = arena()
        state = state_with(spec, (3, 1), 3, monsters=[(2, 1)])
        outcome, _ = md.step(state, EnvAction.FIRE, ACTION_PROFILE)
        assert outcome.events == {"missed_shot": 1, "lost_health": 1}
        assert outcome.reward == pytest.approx(-0.08)

    def test_action_profile_weights(self):
        assert ACTION_PROFILE.kill == 1.0
        assert ACTION_PROFILE.death == -1.0
        assert ACTION_PROFILE.missed_shot == -0.02
        assert ACTION_PROFILE.lost_health == -0.06
        assert ACTION_PROFILE.object_gathered == 0.3

    def test_navigation_profile_weights(self):
        assert NAVIGATION_PROFILE.kill == 0.0
        assert NAVIGATION_PROFILE.death == -1.0
        assert NAVIGATION_PROFILE.missed_shot == 0.0
        assert NAVIGATION_PROFILE.lost_health == -0.1
        assert NAVIGATION_PROFILE.object_gathered == 0.5


class TestStepDynamics:
    def test_walls_block_movement(self):
        spec = arena()
        state = state_with(spec, (1, 1), 0)  # facing north into the wall
        _, after = md.step(state, EnvAction.MOVE_FORWARD, NAVIGATION_PROFILE)
        assert after.agent_cell == (1, 1)

    def test_turns_cycle_headings(self):
        spec = arena()
        state = state_with(spec, (2, 2), 0)
        _, s1 = md.step(state, EnvAction.TURN_RIGHT, NAVIGATION_PROFILE)
        assert s1.heading == 1
        _, s2 = md.step(s1, EnvAction.TURN_LEFT, NAVIGATION_PROFILE)
        assert s2.heading == 0
        _, s3 = md.step(s2, EnvAction.TURN_LEFT, NAVIGATION_PROFILE)
        assert s3.heading == 3

    def test_backward_moves_against_heading(self):
        spec = arena()
        state = state_with(spec, (2, 2), 0)
        _, after = md.step(state, EnvAction.MOVE_BACKWARD, NAVIGATION_PROFILE)
        assert after.agent_cell == (3, 2)

    def test_fire_hits_first_monster_on_ray(self):
        spec = arena()
        state = state_with(spec, (3, 1), 1, monsters=[(3, 3), (3, 5)])
        outcome, after = md.step(state, EnvAction.FIRE, ACTION_PROFILE)
        assert outcome.events["kill"] == 1
        dead = [m for m in after.monsters if m.health == 0]
        assert [m.cell for m in dead] == [(3, 3)]

    def test_step_on_terminal_state_raises(self):
        spec = arena(limit=1)
        state, _ = md.reset(spec, 0, obs_dims=(12, 12))
        _, after = md.step(state, EnvAction.TURN_LEFT, NAVIGATION_PROFILE)
        assert after.terminal
        with pytest.raises(TerminalStateError):
            md.step(after, EnvAction.TURN_LEFT, NAVIGATION_PROFILE)

    def test_death_terminates_and_counts(self):
        spec = arena(limit=500)
        state = state_with(spec, (3, 2), 0, monsters=[(3, 3)])
        deaths = 0
        for _ in range(500):
            outcome, state = md.step(state, EnvAction.TURN_LEFT, ACTION_PROFILE)
            deaths += outcome.events.get("death", 0)
            if outcome.done:
                break
        assert deaths == 1
        assert state.health == 0
        assert state.terminal

    def test_monster_and_object_counts_non_increasing(self):
        spec = arena(limit=80)
        state, _ = md.reset(spec, 11, obs_dims=(12, 12))
        rng = np.random.default_rng(5)
        alive_prev = len(state.monsters)
        objects_prev = len(state.objects)
        while not state.terminal:
            action = EnvAction(int(rng.integers(5)))
            _, state = md.step(state, action, ACTION_PROFILE)
            alive = sum(1 for m in state.monsters if m.health > 0)
            assert alive <= alive_prev
            assert len(state.objects) <= objects_prev
            assert state.health <= md.AGENT_MAX_HEALTH
            alive_prev, objects_prev = alive, len(state.objects)


class TestRewardEventIdentity:
    @given(
        kills=st.integers(0, 3),
        deaths=st.integers(0, 1),
        missed=st.integers(0, 4),
        lost=st.integers(0, 4),
        gathered=st.integers(0, 3),
    )
    def test_reward_is_event_dot_profile(self, kills, deaths, missed, lost, gathered):
        from collections import Counter

        events = Counter()
        for name, k in (
            ("kill", kills), ("death", deaths), ("missed_shot", missed),
            ("lost_health", lost), ("object_gathered", gathered),
        ):
            if k:
                events[name] = k
        for profile in (ACTION_PROFILE, NAVIGATION_PROFILE):
            expected = (
                kills * profile.kill + deaths * profile.death
                + missed * profile.missed_shot + lost * profile.lost_health
                + gathered * profile.object_gathered
            )
            assert md.reward_from_events(events, profile) == pytest.approx(expected)

    def test_zero_events_zero_reward(self):
        from collections import Counter

        assert md.reward_from_events(Counter(), ACTION_PROFILE) == 0.0
        assert md.reward_from_events(Counter(), NAVIGATION_PROFILE) == 0.0


class TestTrajectoryPurity:
    def test_trajectory_pure_function_of_map_seed_actions(self):
        spec = arena(limit=60)
        rng = np.random.default_rng(0)
        actions = [EnvAction(int(a)) for a in rng.integers(0, 5, size=60)]

        def run():
            state, obs = md.reset(spec, 21, obs_dims=(12, 12))
            trace = [obs]
            rewards = []
            for a in actions:
                if state.terminal:
                    break
                outcome, state = md.step(state, a, ACTION_PROFILE)
                trace.append(outcome.observation)
                rewards.append(outcome.reward)
            return trace, rewards, state

        t1, r1, s1 = run()
        t2, r2, s2 = run()
        assert r1 == r2
        assert s1 == s2
        assert all(np.array_equal(a, b) for a, b in zip(t1, t2))

    def test_step_does_not_mutate_input_state(self):
        spec = arena()
        state, _ = md.reset(spec, 3, obs_dims=(12, 12))
        before = (state.agent_cell, state.heading, state.tick, state.objects)
        md.step(state, EnvAction.MOVE_FORWARD, ACTION_PROFILE)
        assert (state.agent_cell, state.heading, state.tick, state.objects) == before


class TestRender:
    def test_same_state_same_pixels(self):
        state, _ = md.reset(arena(), 5, obs_dims=(16, 16))
        a = md.render(state, (16, 16))
        b = md.render(state, (16, 16))
        assert np.array_equal(a, b)

    def test_monster_death_changes_pixels(self):
        spec = arena()
        state = state_with(spec, (3, 1), 1, monsters=[(3, 4)])
        before = md.render(state, (16, 16))
        _, after = md.step(state, EnvAction.FIRE, ACTION_PROFILE)
        after_img = md.render(after, (16, 16))
        assert (before != after_img).any()

    def test_all_wall_view_is_wall_color(self):
        spec = md.load_map(MINIMAL)
        state, _ = md.reset(spec, 0, obs_dims=(10, 10))
        img = md.render(state, (10, 10))
        assert np.allclose(img, md.COLOR_WALL[None, None, :])

    def test_values_in_unit_interval(self):
        state, _ = md.reset(arena(), 2, obs_dims=(21, 21))
        img = md.render(state, (21, 21))
        assert img.shape == (21, 21, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_bad_dims_rejected(self):
        state, _ = md.reset(arena(), 2)
        with pytest.raises(ValueError):
            md.render(state, (0, 21))

    def test_env_wrapper_matches_pure_functions(self):
        spec = arena(limit=30)
        env = md.MiniDoomEnv(spec, ACTION_PROFILE, obs_dims=(12, 12))
        obs_w = env.reset(13)
        state, obs_p = md.reset(spec, 13, obs_dims=(12, 12))
        assert np.array_equal(obs_w, obs_p)
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = EnvAction(int(rng.integers(5)))
            out_w = env.step(a)
            out_p, state = md.step(state, a, ACTION_PROFILE)
            assert np.array_equal(out_w.observation, out_p.observation)
            assert out_w.reward == out_p.reward
            assert out_w.events == out_p.events
            if out_w.done:
                break
