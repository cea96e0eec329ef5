"""
TGM agent application service.

Wires perception (variational mixture), structure learning, transition
learning, forgetting and belief-weighted Q-learning into one online agent,
and runs it against a maze. Every `checkpoint_period` environment steps the
agent refits its mixture on the buffered observations, grows and prunes
components, advances the component ledger, replays the buffered transition
triplets through the Q-table and finally forgets whatever the fixed
components already explain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.application.evaluation import transition_report
from src.core.algorithms.meanshift import MeanShiftConfig
from src.core.algorithms.planner import (
    Belief, EpsilonSchedule, QTable, belief_q_update, epsilon_greedy, sample_q_update,
)
from src.core.algorithms.structure import (
    ComponentLedger, ForgetPlan, StructureConfig, checkpoint_components,
    discover_components, newly_fixed, plan_forgetting, prune_components, transition_indices,
)
from src.core.algorithms.transition import (
    TransitionBatch, TransitionTensor, absorb_forgotten, compute_posterior,
    expected_transitions, resize,
)
from src.core.algorithms.vgm import (
    MixtureState, VGMConfig, commit_empirical_prior, compute_stats, data_ridge, fit,
    predict_responsibilities, update_empirical_prior, update_posterior,
)
from src.core.domain.maze import (
    EnvConfig, EnvState, MazeEnvironment, MazeSpec, N_ACTIONS, StepResult,
)
from src.exceptions import ConfigurationError, InvalidInputError, dimension_mismatch_error
from src.logging_config import EventLog, get_agent_logger, get_performance_logger
from src.validation import check_probability, validate_config

logger = get_agent_logger()
perf_logger = get_performance_logger("agent")

Q_UPDATE_MODES = ("batched", "per_step")
AGENT_KINDS = ("tgm", "tabular")


@dataclass
class AgentConfig:
    """Configuration for the online agent and its training loop."""

    # Environment steps between structure updates
    checkpoint_period: int = 100

    # Component lifecycle (θ_kl, θ_counts)
    kl_threshold: float = 0.5
    persistence_threshold: int = 4

    # Component discovery
    bandwidth: float = 0.5
    novelty_mahalanobis: float = 3.0
    discovery_min_points: int = 5

    # Coordinate-ascent sweeps per refit
    vgm_sweeps: int = 50

    # ε-greedy schedule: linear from start to end over the first decay_fraction of episodes
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5

    # Q-learning
    learning_rate: float = 0.1
    discount: float = 0.9
    q_update_mode: str = "batched"

    # Stop after this many environment steps (None = run all episodes)
    max_total_steps: Optional[int] = None

    seed: int = 0
    agent_kind: str = "tgm"
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.checkpoint_period < 1:
            raise ConfigurationError("checkpoint_period must be >= 1",
                                     parameter='checkpoint_period', value=self.checkpoint_period)
        if self.vgm_sweeps < 1:
            raise ConfigurationError("vgm_sweeps must be >= 1",
                                     parameter='vgm_sweeps', value=self.vgm_sweeps)
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigurationError("learning_rate must be in (0, 1]",
                                     parameter='learning_rate', value=self.learning_rate)
        check_probability(self.discount, 'discount')
        if self.q_update_mode not in Q_UPDATE_MODES:
            raise ConfigurationError(f"q_update_mode must be one of {Q_UPDATE_MODES}",
                                     parameter='q_update_mode', value=self.q_update_mode)
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigurationError(f"agent_kind must be one of {AGENT_KINDS}",
                                     parameter='agent_kind', value=self.agent_kind)
        if self.max_total_steps is not None and self.max_total_steps < 0:
            raise ConfigurationError("max_total_steps must be non-negative",
                                     parameter='max_total_steps', value=self.max_total_steps)
        # The sub-configs validate their own fields
        self.meanshift_config()
        self.structure_config()
        self.epsilon_schedule()
        self.env.validate()

    def meanshift_config(self) -> MeanShiftConfig:
        return MeanShiftConfig(bandwidth=self.bandwidth)

    def vgm_config(self) -> VGMConfig:
        return VGMConfig(max_sweeps=self.vgm_sweeps)

    def structure_config(self) -> StructureConfig:
        return StructureConfig(kl_threshold=self.kl_threshold,
                               persistence_threshold=self.persistence_threshold,
                               novelty_mahalanobis=self.novelty_mahalanobis,
                               discovery_min_points=self.discovery_min_points)

    def epsilon_schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.epsilon_start, self.epsilon_end, self.epsilon_decay_fraction)


class ExperienceBuffer:
    """
    Observations recorded since they were last forgotten.

    Row t holds observation t, its trial id and time step, and the outcome of
    the action taken after it (action -1 while no action has been taken,
    e.g. for the last observation of a trial).
    """

    def __init__(self, dim: int = 2):
        self.dim = dim
        self._observations: List[np.ndarray] = []
        self._episodes: List[int] = []
        self._times: List[int] = []
        self._actions: List[int] = []
        self._rewards: List[float] = []
        self._terminal: List[bool] = []

    def __len__(self) -> int:
        return len(self._observations)

    def append(self, observation: np.ndarray, episode: int, time: int) -> None:
        observation = np.asarray(observation, dtype=float)
        if observation.shape != (self.dim,):
            raise dimension_mismatch_error("observation", (self.dim,), observation.shape)
        self._observations.append(observation)
        self._episodes.append(int(episode))
        self._times.append(int(time))
        self._actions.append(-1)
        self._rewards.append(0.0)
        self._terminal.append(False)

    def record_outcome(self, action: int, reward: float, terminal: bool) -> None:
        """Attach the action taken after the newest observation and its result."""
        if not self._observations:
            raise InvalidInputError("no observation to attach an action to")
        self._actions[-1] = int(action)
        self._rewards[-1] = float(reward)
        self._terminal[-1] = bool(terminal)

    @property
    def observations(self) -> np.ndarray:
        if not self._observations:
            return np.zeros((0, self.dim))
        return np.stack(self._observations)

    @property
    def latest_observation(self) -> np.ndarray:
        if not self._observations:
            raise InvalidInputError("buffer is empty")
        return self._observations[-1]

    @property
    def episode_ids(self) -> np.ndarray:
        return np.asarray(self._episodes, dtype=int)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times, dtype=int)

    @property
    def actions(self) -> np.ndarray:
        return np.asarray(self._actions, dtype=int)

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray(self._rewards, dtype=float)

    @property
    def terminal(self) -> np.ndarray:
        return np.asarray(self._terminal, dtype=bool)

    def links(self) -> np.ndarray:
        """Indices t whose successor t + 1 is the next step of the same trial."""
        return transition_indices(self.episode_ids, self.times)

    def transition_batch(self, responsibilities: np.ndarray,
                         indices: Optional[Sequence[int]] = None) -> TransitionBatch:
        """Triplets (r_t, r_{t+1}, a_t) for the given links (default: all links)."""
        idx = self.links() if indices is None else np.asarray(indices, dtype=int)
        r = np.asarray(responsibilities, dtype=float)
        if r.shape[0] != len(self):
            raise dimension_mismatch_error("responsibilities", len(self), r.shape[0])
        actions = self.actions[idx]
        if np.any(actions < 0):
            raise InvalidInputError("transition triplet references an observation with no action")
        return TransitionBatch(r[idx], r[idx + 1], actions)

    def select(self, indices: Sequence[int]) -> 'ExperienceBuffer':
        """New buffer holding only the given rows, in order."""
        out = ExperienceBuffer(self.dim)
        for i in np.asarray(indices, dtype=int):
            out._observations.append(self._observations[i])
            out._episodes.append(self._episodes[i])
            out._times.append(self._times[i])
            out._actions.append(self._actions[i])
            out._rewards.append(self._rewards[i])
            out._terminal.append(self._terminal[i])
        return out


def _check_plan(buffer: ExperienceBuffer, plan: ForgetPlan) -> None:
    n = len(buffer)
    observations = np.concatenate([plan.observation_forget, plan.observation_keep])
    if observations.size != n or not np.array_equal(np.sort(observations), np.arange(n)):
        raise InvalidInputError("forget plan does not partition the buffered observations",
                                n_observations=n)
    links = buffer.links()
    transitions = np.concatenate([plan.transition_forget, plan.transition_keep])
    if transitions.size != links.size or not np.array_equal(np.sort(transitions), links):
        raise InvalidInputError("forget plan does not partition the buffered transitions",
                                n_transitions=int(links.size))


def apply_forgetting(buffer: ExperienceBuffer, plan: ForgetPlan, state: MixtureState,
                     tensor: TransitionTensor
                     ) -> Tuple[ExperienceBuffer, MixtureState, TransitionTensor]:
    """
    Absorb the forget sets into the empirical priors and drop them.

    The mixture: empirical = prior + stats(N'), prior <- empirical, then
    posterior = prior + stats(N''). The transition counts follow the same
    pattern with the triplets M' and M''. Responsibilities are used as they
    stand; the returned buffer and state hold only N''.

    Raises:
        InvalidInputError: The plan does not match the buffer
    """
    if state.n_points != len(buffer):
        raise dimension_mismatch_error("mixture responsibilities", len(buffer), state.n_points)
    if tensor.n_states != state.n_components:
        raise dimension_mismatch_error("transition tensor", state.n_components, tensor.n_states)
    _check_plan(buffer, plan)
    if plan.is_empty:
        return buffer, state, tensor

    points = buffer.observations
    r = state.responsibilities
    forget, keep = plan.observation_forget, plan.observation_keep

    state = update_empirical_prior(state, compute_stats(points[forget], r[forget]))
    state = commit_empirical_prior(state).select_points(keep)
    state = update_posterior(state, compute_stats(points[keep], r[keep]))

    tensor = absorb_forgotten(tensor, buffer.transition_batch(r, plan.transition_forget))
    tensor = compute_posterior(tensor.commit_empirical(),
                               buffer.transition_batch(r, plan.transition_keep))

    return buffer.select(keep), state, tensor


class TGMAgent:
    """
    Online agent acting on beliefs over learned hidden states.

    Owns the mixture state, transition tensor, Q-table, component ledger and
    experience buffer; all of them are re-indexed together whenever
    components are added or removed.
    """

    kind = "tgm"

    def __init__(self, cfg: Optional[AgentConfig] = None, dim: int = 2,
                 n_actions: int = N_ACTIONS, events: Optional[EventLog] = None):
        self.cfg = cfg or AgentConfig()
        self.dim = dim
        self.n_actions = n_actions
        self.events = events or EventLog()
        self.state = MixtureState.empty(dim)
        self.tensor = TransitionTensor.uniform(n_actions, 0)
        self.q = QTable.zeros(n_actions, 0, self.cfg.learning_rate, self.cfg.discount)
        self.ledger = ComponentLedger()
        self.buffer = ExperienceBuffer(dim)
        self.total_steps = 0
        self.n_checkpoints = 0
        self.last_vfe: Optional[float] = None
        self._episode = 0
        self.episodes_started = 0
        self._transitions = expected_transitions(self.tensor)

    @property
    def has_model(self) -> bool:
        return self.state.n_components > 0

    @property
    def n_components(self) -> int:
        return self.state.n_components

    def active_components(self) -> int:
        """Components that are fixed or carry responsibility mass in the buffer."""
        if not self.has_model:
            return 0
        active = self.ledger.fixed_mask if len(self.ledger) else np.zeros(self.n_components, bool)
        if self.state.n_points:
            active = active | self.state.active_mask()
        return int(active.sum())

    def belief(self, observation: np.ndarray) -> Optional[Belief]:
        if not self.has_model:
            return None
        probs = predict_responsibilities(self.state, np.asarray(observation, dtype=float)[None, :])
        return Belief(probs[0])

    def act(self, observation: np.ndarray, env_state: EnvState, epsilon: float,
            rng: np.random.Generator) -> int:
        """ε-greedy on the belief-expected Q-values; uniform until a model exists."""
        belief = self.belief(observation)
        if belief is None:
            return int(rng.integers(self.n_actions))
        return epsilon_greedy(self.q, belief, epsilon, rng)

    def start_episode(self, env_state: EnvState, observation: np.ndarray) -> None:
        # Trial ids count every episode this agent has seen, across train() calls
        self._episode = self.episodes_started
        self.episodes_started += 1
        self.buffer.append(observation, self._episode, env_state.steps)

    def observe(self, previous: EnvState, action: int, result: StepResult) -> None:
        """Store one step's outcome and run a structure update when the period is due."""
        terminal = result.state.goal_reached
        if self.cfg.q_update_mode == "per_step" and self.has_model:
            belief = self.belief(self.buffer.latest_observation)
            self.q = belief_q_update(self.q, belief, action, result.reward,
                                     self._transitions, terminal)
        self.buffer.record_outcome(action, result.reward, terminal)
        self.buffer.append(result.observation, self._episode, result.state.steps)
        self.total_steps += 1
        if self.total_steps % self.cfg.checkpoint_period == 0:
            self.update_structure(hold_last=not result.state.done)

    # Structure update

    def _fit(self, state: MixtureState, points: np.ndarray) -> MixtureState:
        def record(sweep: int, vfe: float) -> None:
            self.last_vfe = vfe

        return fit(state, points, sweeps=self.cfg.vgm_sweeps, cfg=self.cfg.vgm_config(),
                   progress_callback=record)

    def _reindex(self, new_k: int, mapping: np.ndarray) -> None:
        self.tensor = resize(self.tensor, new_k, mapping)
        self.q = self.q.resize(new_k, mapping)

    def update_structure(self, hold_last: bool = False) -> None:
        """
        One periodic checkpoint: refit, discover, prune, advance the ledger,
        replay transitions through the Q-table, then forget.
        """
        points = self.buffer.observations
        if points.shape[0] == 0:
            return
        self.n_checkpoints += 1
        structure_cfg = self.cfg.structure_config()

        if self.has_model:
            state = self._fit(self.state.with_responsibilities(
                predict_responsibilities(self.state, points)), points)
        else:
            state = MixtureState.empty(self.dim, points.shape[0])

        old_k = state.n_components
        state, identity = discover_components(points, self.cfg.meanshift_config(), state,
                                              structure_cfg, data_ridge(points))
        if state.n_components > old_k:
            self._reindex(state.n_components, identity)
            self.ledger = self.ledger.resize(state.n_components, identity)
            self.events.emit("component_discovered", step=self.total_steps,
                             added=state.n_components - old_k, K=state.n_components)
            state = self._fit(state, points)

        before_k = state.n_components
        state, self.ledger, mapping = prune_components(state, self.ledger,
                                                       structure_cfg.mass_epsilon)
        if state.n_components < before_k:
            self._reindex(state.n_components, mapping)
            self.events.emit("component_pruned", step=self.total_steps,
                             removed=[int(k) for k in np.flatnonzero(mapping < 0)],
                             K=state.n_components)

        previous = self.ledger
        self.ledger = checkpoint_components(self.ledger, state.point_estimates(), structure_cfg)
        for k in newly_fixed(previous, self.ledger):
            self.events.emit("component_fixed", step=self.total_steps, component=k)

        r = state.responsibilities
        links = self.buffer.links()
        self.tensor = compute_posterior(self.tensor, self.buffer.transition_batch(r, links))
        self._transitions = expected_transitions(self.tensor)
        if self.cfg.q_update_mode == "batched":
            self._replay(r, links)

        hold = [points.shape[0] - 1] if hold_last else None
        plan = plan_forgetting(r, self.ledger, self.buffer.episode_ids, self.buffer.times, hold)
        self.buffer, self.state, self.tensor = apply_forgetting(self.buffer, plan, state,
                                                                self.tensor)
        self._transitions = expected_transitions(self.tensor)
        if not plan.is_empty:
            self.events.emit("forgetting_applied", step=self.total_steps,
                             observations=int(plan.observation_forget.size),
                             transitions=int(plan.transition_forget.size),
                             buffer_size=len(self.buffer))

        self.events.emit("checkpoint", step=self.total_steps, K=self.n_components,
                         fixed=self.ledger.n_fixed, buffer_size=len(self.buffer),
                         vfe=self.last_vfe)
        logger.debug("checkpoint %d: K=%d fixed=%d buffer=%d", self.n_checkpoints,
                     self.n_components, self.ledger.n_fixed, len(self.buffer))

    def _replay(self, responsibilities: np.ndarray, links: np.ndarray) -> None:
        """Belief-weighted Q-update for every buffered triplet, oldest first."""
        if responsibilities.shape[1] == 0:
            return
        actions, rewards, terminal = self.buffer.actions, self.buffer.rewards, self.buffer.terminal
        q = self.q
        for t in links:
            q = belief_q_update(q, Belief(responsibilities[t]), actions[t], rewards[t],
                                self._transitions, bool(terminal[t]))
        self.q = q

    def transition_distance(self, spec: MazeSpec) -> Optional[float]:
        """Mean TV distance of the learned dynamics from the maze's true dynamics."""
        if not self.has_model:
            return None
        return transition_report(spec, self.state, self.tensor).mean_tv


class TabularQAgent:
    """ε-greedy Q-learning on the true cell index; the comparison baseline."""

    kind = "tabular"

    def __init__(self, cfg: Optional[AgentConfig] = None, spec: Optional[MazeSpec] = None,
                 n_actions: int = N_ACTIONS, q: Optional[QTable] = None):
        self.cfg = cfg or AgentConfig(agent_kind="tabular")
        if q is None:
            if spec is None:
                raise InvalidInputError("a maze or a Q-table is required")
            q = QTable.zeros(n_actions, spec.n_cells, self.cfg.learning_rate, self.cfg.discount)
        self.spec = spec
        self.q = q
        self.n_actions = q.n_actions
        self.total_steps = 0
        self.last_vfe: Optional[float] = None

    def bind(self, spec: MazeSpec) -> 'TabularQAgent':
        if spec.n_cells != self.q.n_states:
            raise dimension_mismatch_error("maze floor cells", self.q.n_states, spec.n_cells)
        self.spec = spec
        return self

    def _cell(self, env_state: EnvState) -> int:
        if self.spec is None:
            raise InvalidInputError("tabular agent is not bound to a maze")
        return self.spec.cell_index(env_state.position)

    def act(self, observation: np.ndarray, env_state: EnvState, epsilon: float,
            rng: np.random.Generator) -> int:
        return epsilon_greedy(self.q, Belief.one_hot(self._cell(env_state), self.q.n_states),
                              epsilon, rng)

    def start_episode(self, env_state: EnvState, observation: np.ndarray) -> None:
        pass

    def observe(self, previous: EnvState, action: int, result: StepResult) -> None:
        self.q = sample_q_update(self.q, self._cell(previous), action, result.reward,
                                 self._cell(result.state), terminal=result.state.goal_reached)
        self.total_steps += 1

    def active_components(self) -> int:
        return self.q.n_states

    def transition_distance(self, spec: MazeSpec) -> Optional[float]:
        return None


Agent = Union[TGMAgent, TabularQAgent]


def make_agent(cfg: AgentConfig, spec: MazeSpec, events: Optional[EventLog] = None) -> Agent:
    if cfg.agent_kind == "tabular":
        return TabularQAgent(cfg, spec)
    return TGMAgent(cfg, events=events)


@dataclass
class EpisodeMetrics:
    """One metrics line; None where a value is unavailable."""
    episode: int
    steps: int
    return_: float
    success: bool
    epsilon: float
    K_active: Optional[int]
    vfe: Optional[float]
    tv_distance: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'episode': self.episode,
            'steps': self.steps,
            'return': self.return_,
            'success': self.success,
            'epsilon': self.epsilon,
            'K_active': self.K_active,
            'vfe': self.vfe,
            'tv_distance': self.tv_distance,
        }


@dataclass
class TrainingResult:
    """Trained agent, its metrics and the random streams it ended with."""
    agent: Agent
    metrics: List[EpisodeMetrics]
    episodes_completed: int
    total_steps: int
    env_rng: np.random.Generator
    policy_rng: np.random.Generator

    def rng_states(self) -> Dict[str, Any]:
        return {'env': self.env_rng.bit_generator.state,
                'policy': self.policy_rng.bit_generator.state}

    def final_window(self, size: int = 50) -> List[EpisodeMetrics]:
        return self.metrics[-size:] if size > 0 else []


def seeded_generators(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent environment and policy streams derived from one seed."""
    env_seed, policy_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_seed), np.random.default_rng(policy_seed)


@perf_logger.log_timing("train")
@validate_config()
def train(spec: MazeSpec, cfg: AgentConfig, episodes: int, agent: Optional[Agent] = None,
          events: Optional[EventLog] = None,
          on_episode: Optional[Callable[[EpisodeMetrics], None]] = None) -> TrainingResult:
    """
    Run the agent for `episodes` episodes (or until cfg.max_total_steps).

    Args:
        spec: Maze to train on
        cfg: Agent and environment configuration
        episodes: Number of episodes, >= 0
        agent: Agent to continue training (default: a fresh one of cfg.agent_kind)
        events: Structure event sink for a fresh TGM agent
        on_episode: Called with each episode's metrics as soon as it ends

    Returns:
        TrainingResult with the agent, per-episode metrics and RNG streams
    """
    if episodes < 0:
        raise ConfigurationError("episodes must be non-negative", parameter='episodes',
                                 value=episodes)
    env_rng, policy_rng = seeded_generators(cfg.seed)
    env = MazeEnvironment(spec, cfg.env, env_rng)
    agent = agent or make_agent(cfg, spec, events)
    schedule = cfg.epsilon_schedule()
    cap = cfg.max_total_steps
    steps_done = 0
    metrics: List[EpisodeMetrics] = []

    logger.info("training started", extra={'context': {
        'maze': spec.name, 'episodes': episodes, 'seed': cfg.seed, 'agent': cfg.agent_kind}})

    for episode in range(episodes):
        if cap is not None and steps_done >= cap:
            break
        epsilon = schedule.value(episode, episodes)
        state, observation = env.reset()
        agent.start_episode(state, observation)
        total = 0.0
        while not state.done and (cap is None or steps_done < cap):
            action = agent.act(observation, state, epsilon, policy_rng)
            result = env.step(state, action)
            agent.observe(state, action, result)
            total += result.reward
            steps_done += 1
            state, observation = result.state, result.observation

        record = EpisodeMetrics(
            episode=episode, steps=state.steps, return_=total, success=state.goal_reached,
            epsilon=epsilon, K_active=agent.active_components(), vfe=agent.last_vfe,
            tv_distance=agent.transition_distance(spec),
        )
        metrics.append(record)
        if on_episode:
            on_episode(record)

    logger.info("training finished", extra={'context': {
        'maze': spec.name, 'episodes': len(metrics), 'steps': steps_done,
        'successes': sum(m.success for m in metrics)}})
    return TrainingResult(agent=agent, metrics=metrics, episodes_completed=len(metrics),
                          total_steps=steps_done, env_rng=env_rng, policy_rng=policy_rng)
