"""
Tests for the online agent: experience buffer, forgetting and the training loop.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.application.agent import (
    AgentConfig, ExperienceBuffer, TabularQAgent, TGMAgent, apply_forgetting,
    seeded_generators, train,
)
from src.application.evaluation import transition_report
from src.core.algorithms.meanshift import MeanShiftConfig, mean_shift
from src.core.algorithms.structure import (
    ComponentLedger, ComponentStatus, ForgetPlan, LedgerEntry, plan_forgetting,
)
from src.core.algorithms.transition import TransitionTensor, compute_posterior
from src.core.algorithms.vgm import compute_stats, fit, init_prior_from_clusters, update_posterior
from src.core.domain.maze import EnvConfig, load_maze
from src.exceptions import ConfigurationError, InvalidInputError
from src.logging_config import EventLog

from tests.conftest import MAZE_DIR


def _quick_config(**overrides):
    base = dict(checkpoint_period=20, vgm_sweeps=10, seed=3,
                env=EnvConfig(max_steps=30))
    base.update(overrides)
    return AgentConfig(**base)


def _two_region_buffer(rng, episodes=3, steps=20):
    """First half of each trial near (0, 0), second half near (3, 3); last steps have no action."""
    buffer = ExperienceBuffer()
    for episode in range(episodes):
        for t in range(steps):
            centre = (0.0, 0.0) if t < steps // 2 else (3.0, 3.0)
            buffer.append(rng.normal(centre, 0.05), episode, t)
            if t < steps - 1:
                buffer.record_outcome(int(rng.integers(5)), 0.0, False)
    return buffer


class TestAgentConfig:

    def test_defaults(self):
        cfg = AgentConfig()
        assert cfg.checkpoint_period == 100
        assert cfg.kl_threshold == 0.5
        assert cfg.persistence_threshold == 4
        assert cfg.q_update_mode == "batched"
        assert cfg.agent_kind == "tgm"

    def test_sub_configs(self):
        cfg = AgentConfig(kl_threshold=0.25, bandwidth=0.7, vgm_sweeps=7)
        assert cfg.structure_config().kl_threshold == 0.25
        assert cfg.meanshift_config().bandwidth == 0.7
        assert cfg.vgm_config().max_sweeps == 7

    def test_invalid_update_mode(self):
        with pytest.raises(ConfigurationError) as exc_info:
            AgentConfig(q_update_mode="sometimes")
        assert exc_info.value.details['parameter'] == 'q_update_mode'

    def test_invalid_bandwidth(self):
        with pytest.raises(ConfigurationError):
            AgentConfig(bandwidth=0.0)

    @pytest.mark.parametrize("field, value", [
        ('checkpoint_period', 0),
        ('learning_rate', 0.0),
        ('discount', 1.5),
        ('agent_kind', 'dqn'),
        ('max_total_steps', -1),
        ('epsilon_start', 2.0),
    ])
    def test_invalid_fields(self, field, value):
        with pytest.raises(ConfigurationError):
            AgentConfig(**{field: value})


class TestExperienceBuffer:

    def test_append_and_outcome(self):
        buffer = ExperienceBuffer()
        buffer.append([0.0, 0.0], 0, 0)
        buffer.record_outcome(3, 0.5, False)
        buffer.append([0.0, 1.0], 0, 1)
        assert len(buffer) == 2
        assert buffer.actions.tolist() == [3, -1]
        assert buffer.rewards.tolist() == [0.5, 0.0]
        assert_allclose(buffer.latest_observation, [0.0, 1.0])

    def test_links_respect_trials(self):
        buffer = ExperienceBuffer()
        for episode, t in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]:
            buffer.append([0.0, 0.0], episode, t)
        assert buffer.links().tolist() == [0, 1, 3]

    def test_transition_batch(self):
        buffer = ExperienceBuffer()
        buffer.append([0.0, 0.0], 0, 0)
        buffer.record_outcome(1, 0.0, False)
        buffer.append([1.0, 0.0], 0, 1)
        r = np.array([[1.0, 0.0], [0.0, 1.0]])
        batch = buffer.transition_batch(r)
        assert len(batch) == 1
        assert_allclose(batch.r0, [[1.0, 0.0]])
        assert_allclose(batch.r1, [[0.0, 1.0]])
        assert batch.actions.tolist() == [1]

    def test_transition_batch_without_action(self):
        """A link whose first observation has no recorded action is rejected."""
        buffer = ExperienceBuffer()
        buffer.append([0.0, 0.0], 0, 0)
        buffer.append([1.0, 0.0], 0, 1)
        with pytest.raises(InvalidInputError):
            buffer.transition_batch(np.eye(2))

    def test_responsibility_rows_must_match(self):
        buffer = ExperienceBuffer()
        buffer.append([0.0, 0.0], 0, 0)
        with pytest.raises(InvalidInputError):
            buffer.transition_batch(np.eye(2))

    def test_select(self, rng):
        buffer = _two_region_buffer(rng, episodes=1, steps=6)
        picked = buffer.select([1, 2, 5])
        assert len(picked) == 3
        assert picked.times.tolist() == [1, 2, 5]
        assert_allclose(picked.observations, buffer.observations[[1, 2, 5]])
        assert picked.links().tolist() == [0]

    def test_dimension_errors(self):
        buffer = ExperienceBuffer()
        with pytest.raises(InvalidInputError):
            buffer.append([0.0, 0.0, 0.0], 0, 0)
        with pytest.raises(InvalidInputError):
            buffer.record_outcome(0, 0.0, False)
        with pytest.raises(InvalidInputError):
            _ = buffer.latest_observation


class TestApplyForgetting:
    """Forgetting moves evidence into the empirical prior without changing the posterior."""

    @pytest.fixture
    def setup(self, rng):
        buffer = _two_region_buffer(rng)
        points = buffer.observations
        state = init_prior_from_clusters(mean_shift(points, MeanShiftConfig(bandwidth=0.5)), points)
        assert state.n_components == 2
        state = fit(state, points, sweeps=20)
        state = update_posterior(state, compute_stats(points, state.responsibilities))
        r = state.responsibilities
        tensor = compute_posterior(TransitionTensor.uniform(5, 2),
                                   buffer.transition_batch(r, buffer.links()))
        ledger = ComponentLedger((LedgerEntry(status=ComponentStatus.FIXED), LedgerEntry()))
        plan = plan_forgetting(r, ledger, buffer.episode_ids, buffer.times)
        return buffer, state, tensor, plan

    def test_posterior_unchanged(self, setup):
        buffer, state, tensor, plan = setup
        assert not plan.is_empty
        new_buffer, new_state, new_tensor = apply_forgetting(buffer, plan, state, tensor)

        for name in ('d', 'm', 'beta', 'W', 'v'):
            assert_allclose(getattr(new_state.posterior, name), getattr(state.posterior, name),
                            rtol=1e-8, atol=1e-8)
        assert_allclose(new_tensor.posterior, tensor.posterior, rtol=0, atol=1e-12)

    def test_buffer_and_priors_advance(self, setup):
        buffer, state, tensor, plan = setup
        new_buffer, new_state, new_tensor = apply_forgetting(buffer, plan, state, tensor)
        assert len(new_buffer) == plan.observation_keep.size
        assert new_state.n_points == len(new_buffer)
        assert_allclose(new_state.empirical.d, new_state.prior.d)
        assert new_state.prior.d.sum() > state.prior.d.sum()
        assert new_tensor.prior.sum() > tensor.prior.sum()

    def test_empty_plan_is_identity(self, setup):
        buffer, state, tensor, _ = setup
        plan = ForgetPlan.keep_all(len(buffer), buffer.links())
        result = apply_forgetting(buffer, plan, state, tensor)
        assert result[0] is buffer
        assert result[1] is state
        assert result[2] is tensor

    def test_mismatched_plan(self, setup):
        buffer, state, tensor, _ = setup
        plan = ForgetPlan.keep_all(len(buffer) - 1, buffer.links()[:-1])
        with pytest.raises(InvalidInputError):
            apply_forgetting(buffer, plan, state, tensor)


class TestTraining:

    def test_zero_episodes(self, room_2x2):
        result = train(room_2x2, _quick_config(), 0)
        assert result.metrics == []
        assert result.total_steps == 0
        assert result.agent.n_components == 0

    def test_zero_step_budget(self, room_2x2):
        result = train(room_2x2, _quick_config(max_total_steps=0), 10)
        assert result.metrics == []
        assert result.episodes_completed == 0

    def test_negative_episodes(self, room_2x2):
        with pytest.raises(ConfigurationError) as exc_info:
            train(room_2x2, _quick_config(), -1)
        assert exc_info.value.details['parameter'] == 'episodes'

    def test_step_budget_cuts_run(self, room_2x2):
        result = train(room_2x2, _quick_config(max_total_steps=45), 100)
        assert result.total_steps == 45
        assert sum(m.steps for m in result.metrics) == 45

    def test_metrics_schema(self, room_2x2):
        result = train(room_2x2, _quick_config(), 4)
        assert len(result.metrics) == 4
        record = result.metrics[-1].to_dict()
        assert set(record) == {'episode', 'steps', 'return', 'success', 'epsilon',
                               'K_active', 'vfe', 'tv_distance'}
        assert [m.episode for m in result.metrics] == [0, 1, 2, 3]
        assert result.metrics[0].epsilon == 1.0

    def test_deterministic(self, room_2x2):
        """Same seed, same metrics, bit for bit."""
        first = [m.to_dict() for m in train(room_2x2, _quick_config(), 8).metrics]
        second = [m.to_dict() for m in train(room_2x2, _quick_config(), 8).metrics]
        assert first == second

    def test_seed_streams_differ(self):
        env_rng, policy_rng = seeded_generators(7)
        assert env_rng.random() != policy_rng.random()

    def test_on_episode_callback(self, room_2x2):
        seen = []
        train(room_2x2, _quick_config(), 3, on_episode=seen.append)
        assert [m.episode for m in seen] == [0, 1, 2]

    def test_per_step_mode(self, room_2x2):
        result = train(room_2x2, _quick_config(q_update_mode="per_step"), 6)
        agent = result.agent
        assert isinstance(agent, TGMAgent)
        assert agent.q.n_states == agent.n_components == agent.tensor.n_states

    def test_tabular_agent(self, room_2x2):
        result = train(room_2x2, _quick_config(agent_kind="tabular"), 20)
        agent = result.agent
        assert isinstance(agent, TabularQAgent)
        assert agent.q.n_states == room_2x2.n_cells
        assert all(m.K_active == room_2x2.n_cells for m in result.metrics)
        assert all(m.vfe is None and m.tv_distance is None for m in result.metrics)

    def test_events_recorded(self, room_2x2):
        events = EventLog()
        train(room_2x2, _quick_config(), 6, events=events)
        names = {record['event'] for record in events.records}
        assert 'checkpoint' in names
        assert 'component_discovered' in names

    def test_components_stay_aligned(self, room_3x3):
        """Mixture, tensor, Q-table and ledger always agree on K."""
        result = train(room_3x3, _quick_config(env=EnvConfig(max_steps=60)), 6)
        agent = result.agent
        k = agent.n_components
        assert k > 0
        assert agent.tensor.n_states == k
        assert agent.q.n_states == k
        assert len(agent.ledger) == k
        assert agent.state.n_points == len(agent.buffer)


class TestMemoryBound:
    """Once components are fixed, forgetting keeps the buffer small."""

    @pytest.mark.slow
    def test_buffer_stays_bounded(self, room_2x2):
        cfg = AgentConfig(checkpoint_period=50, epsilon_start=1.0, epsilon_end=1.0,
                          max_total_steps=10_000, vgm_sweeps=20, seed=11,
                          env=EnvConfig(max_steps=10_000))
        events = EventLog()
        result = train(room_2x2, cfg, 10_000, events=events)
        assert result.total_steps == 10_000
        assert any(record['event'] == 'forgetting_applied' for record in events.records)

        checkpoints = [r for r in events.records if r['event'] == 'checkpoint']
        assert len(checkpoints) == 10_000 // cfg.checkpoint_period
        lengths = [r['buffer_size'] for r in checkpoints if 0 < r['K'] == r['fixed']]
        assert len(lengths) >= len(checkpoints) // 2
        assert max(lengths) < 3 * cfg.checkpoint_period


@pytest.mark.acceptance
class TestEndToEnd:
    """Multi-seed maze runs with the default configuration."""

    SOLVED_MAZES = ["bent_corridor", "branch", "room_3x3", "room_4x4"]

    def test_transition_recovery(self):
        spec = load_maze(MAZE_DIR / "bent_corridor.maze")
        cfg = AgentConfig(epsilon_start=1.0, epsilon_end=1.0, max_total_steps=5000, seed=0)
        result = train(spec, cfg, 100_000)
        agent = result.agent
        assert abs(agent.n_components - spec.n_cells) <= 1
        report = transition_report(spec, agent.state, agent.tensor)
        assert report.fraction_within(0.15) >= 0.9

    @pytest.mark.parametrize("maze", SOLVED_MAZES)
    def test_solves_maze(self, maze):
        spec = load_maze(MAZE_DIR / f"{maze}.maze")
        solved = 0
        for seed in range(5):
            result = train(spec, AgentConfig(seed=seed), 500)
            window = result.final_window(50)
            if np.mean([m.success for m in window]) >= 0.8:
                solved += 1
        assert solved >= 4

    def test_long_corridor_not_solved(self):
        spec = load_maze(MAZE_DIR / "long_corridor.maze")
        result = train(spec, AgentConfig(seed=0), 500)
        window = result.final_window(50)
        assert np.mean([m.success for m in window]) < 0.1
