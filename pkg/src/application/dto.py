"""
Data Transfer Objects for agent checkpoints.

Provides the JSON document that bundles a trained agent (mixture, transition
tensor, ledger, Q-table, buffered experience) with its run metadata.
Floating-point arrays are stored as `float.hex` strings so a save/load
round trip is bit-exact.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.application.agent import (
    Agent, AgentConfig, ExperienceBuffer, TGMAgent, TabularQAgent, TrainingResult,
)
from src.core.algorithms.planner import QTable
from src.core.algorithms.structure import ComponentLedger, ComponentStatus, LedgerEntry
from src.core.algorithms.transition import TransitionTensor, expected_transitions
from src.core.algorithms.vgm import MixtureState, MixtureTier
from src.core.domain.distributions import GaussianParams
from src.core.domain.maze import EnvConfig, MazeSpec
from src.exceptions import CheckpointError, TGMError

FORMAT_VERSION = 1


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class ArrayDTO(BaseModel):
    """An n-d array: shape plus row-major data."""
    model_config = ConfigDict(frozen=True)

    shape: List[int]
    dtype: Literal['float64', 'int64', 'bool'] = 'float64'
    data: List[str]

    @model_validator(mode='after')
    def _check_size(self) -> 'ArrayDTO':
        if any(n < 0 for n in self.shape):
            raise ValueError("negative dimension in shape")
        if len(self.data) != int(np.prod(self.shape, dtype=int)):
            raise ValueError(f"data has {len(self.data)} entries for shape {self.shape}")
        return self

    @classmethod
    def from_array(cls, value) -> 'ArrayDTO':
        arr = np.asarray(value)
        flat = arr.ravel()
        if arr.dtype == bool:
            return cls(shape=list(arr.shape), dtype='bool', data=['1' if x else '0' for x in flat])
        if np.issubdtype(arr.dtype, np.integer):
            return cls(shape=list(arr.shape), dtype='int64', data=[str(int(x)) for x in flat])
        return cls(shape=list(arr.shape), data=[float(x).hex() for x in flat.astype(float)])

    def to_array(self) -> np.ndarray:
        if self.dtype == 'bool':
            flat = np.array([x == '1' for x in self.data], dtype=bool)
        elif self.dtype == 'int64':
            flat = np.array([int(x) for x in self.data], dtype=np.int64)
        else:
            flat = np.array([float.fromhex(x) for x in self.data], dtype=float)
        return flat.reshape(self.shape)


class MixtureTierDTO(BaseModel):
    d: ArrayDTO
    m: ArrayDTO
    beta: ArrayDTO
    W: ArrayDTO
    v: ArrayDTO

    @classmethod
    def from_domain(cls, tier: MixtureTier) -> 'MixtureTierDTO':
        return cls(d=ArrayDTO.from_array(tier.d), m=ArrayDTO.from_array(tier.m),
                   beta=ArrayDTO.from_array(tier.beta), W=ArrayDTO.from_array(tier.W),
                   v=ArrayDTO.from_array(tier.v))

    def to_domain(self) -> MixtureTier:
        return MixtureTier(d=self.d.to_array(), m=self.m.to_array(), beta=self.beta.to_array(),
                           W=self.W.to_array(), v=self.v.to_array())


class MixtureStateDTO(BaseModel):
    prior: MixtureTierDTO
    empirical: MixtureTierDTO
    posterior: MixtureTierDTO
    responsibilities: ArrayDTO

    @classmethod
    def from_domain(cls, state: MixtureState) -> 'MixtureStateDTO':
        return cls(prior=MixtureTierDTO.from_domain(state.prior),
                   empirical=MixtureTierDTO.from_domain(state.empirical),
                   posterior=MixtureTierDTO.from_domain(state.posterior),
                   responsibilities=ArrayDTO.from_array(state.responsibilities))

    def to_domain(self) -> MixtureState:
        return MixtureState(prior=self.prior.to_domain(), empirical=self.empirical.to_domain(),
                            posterior=self.posterior.to_domain(),
                            responsibilities=self.responsibilities.to_array())


class TransitionTensorDTO(BaseModel):
    prior: ArrayDTO
    empirical: ArrayDTO
    posterior: ArrayDTO

    @classmethod
    def from_domain(cls, tensor: TransitionTensor) -> 'TransitionTensorDTO':
        return cls(prior=ArrayDTO.from_array(tensor.prior),
                   empirical=ArrayDTO.from_array(tensor.empirical),
                   posterior=ArrayDTO.from_array(tensor.posterior))

    def to_domain(self) -> TransitionTensor:
        return TransitionTensor(prior=self.prior.to_array(), empirical=self.empirical.to_array(),
                                posterior=self.posterior.to_array())


class GaussianDTO(BaseModel):
    mean: ArrayDTO
    precision: ArrayDTO


class LedgerEntryDTO(BaseModel):
    persistence_count: int = Field(ge=0)
    status: Literal['flexible', 'fixed']
    snapshot: Optional[GaussianDTO] = None

    @classmethod
    def from_domain(cls, entry: LedgerEntry) -> 'LedgerEntryDTO':
        snapshot = None
        if entry.snapshot is not None:
            snapshot = GaussianDTO(mean=ArrayDTO.from_array(entry.snapshot.mean),
                                   precision=ArrayDTO.from_array(entry.snapshot.precision))
        return cls(persistence_count=entry.persistence_count, status=entry.status.value,
                   snapshot=snapshot)

    def to_domain(self) -> LedgerEntry:
        snapshot = None
        if self.snapshot is not None:
            snapshot = GaussianParams(self.snapshot.mean.to_array(),
                                      self.snapshot.precision.to_array())
        return LedgerEntry(self.persistence_count, ComponentStatus(self.status), snapshot)


class QTableDTO(BaseModel):
    values: ArrayDTO
    learning_rate: float = Field(gt=0.0, le=1.0)
    discount: float = Field(ge=0.0, le=1.0)

    @classmethod
    def from_domain(cls, q: QTable) -> 'QTableDTO':
        return cls(values=ArrayDTO.from_array(q.values), learning_rate=q.learning_rate,
                   discount=q.discount)

    def to_domain(self) -> QTable:
        return QTable(self.values.to_array(), self.learning_rate, self.discount)


class BufferDTO(BaseModel):
    """Buffered experience; row t of each array describes observation t."""
    observations: ArrayDTO
    episode_ids: ArrayDTO
    times: ArrayDTO
    actions: ArrayDTO
    rewards: ArrayDTO
    terminal: ArrayDTO

    @classmethod
    def from_domain(cls, buffer: ExperienceBuffer) -> 'BufferDTO':
        return cls(observations=ArrayDTO.from_array(buffer.observations),
                   episode_ids=ArrayDTO.from_array(buffer.episode_ids),
                   times=ArrayDTO.from_array(buffer.times),
                   actions=ArrayDTO.from_array(buffer.actions),
                   rewards=ArrayDTO.from_array(buffer.rewards),
                   terminal=ArrayDTO.from_array(buffer.terminal))

    def to_domain(self) -> ExperienceBuffer:
        observations = self.observations.to_array()
        buffer = ExperienceBuffer(observations.shape[1] if observations.ndim == 2 else 2)
        for obs, ep, t, a, r, term in zip(observations, self.episode_ids.to_array(),
                                          self.times.to_array(), self.actions.to_array(),
                                          self.rewards.to_array(), self.terminal.to_array()):
            buffer.append(obs, int(ep), int(t))
            if a >= 0:
                buffer.record_outcome(int(a), float(r), bool(term))
        return buffer


class CheckpointDTO(BaseModel):
    """Everything needed to inspect, evaluate or resume a trained agent."""

    format_version: Literal[1] = FORMAT_VERSION
    agent_kind: Literal['tgm', 'tabular'] = 'tgm'
    config_hash: str
    seed: int
    episodes_completed: int = Field(ge=0)
    total_steps: int = Field(ge=0)
    mixture: Optional[MixtureStateDTO] = None
    transitions: Optional[TransitionTensorDTO] = None
    ledger: List[LedgerEntryDTO] = Field(default_factory=list)
    q_table: Optional[QTableDTO] = None
    buffer: Optional[BufferDTO] = None
    rng_states: Dict[str, Any] = Field(default_factory=dict)
    # AgentConfig fields, env nested; None in documents written before it was stored
    agent_config: Optional[Dict[str, Any]] = None

    @model_validator(mode='after')
    def _check_consistency(self) -> 'CheckpointDTO':
        if self.mixture is not None:
            k = self.mixture.prior.d.shape[0]
            if self.ledger and len(self.ledger) != k:
                raise ValueError(f"ledger has {len(self.ledger)} entries for {k} components")
            if self.transitions is not None and self.transitions.prior.shape[1:] != [k, k]:
                raise ValueError("transition tensor does not match the component count")
        return self

    @classmethod
    def from_agent(cls, agent: Agent, config_hash: str, seed: int, episodes_completed: int,
                   total_steps: int,
                   rng_states: Optional[Dict[str, Any]] = None) -> 'CheckpointDTO':
        doc: Dict[str, Any] = dict(agent_kind=agent.kind, config_hash=config_hash, seed=seed,
                                   episodes_completed=episodes_completed, total_steps=total_steps,
                                   q_table=QTableDTO.from_domain(agent.q),
                                   rng_states=rng_states or {},
                                   agent_config=asdict(agent.cfg))
        if isinstance(agent, TGMAgent):
            if agent.has_model:
                doc['mixture'] = MixtureStateDTO.from_domain(agent.state)
                doc['transitions'] = TransitionTensorDTO.from_domain(agent.tensor)
                doc['ledger'] = [LedgerEntryDTO.from_domain(e) for e in agent.ledger.entries]
            else:
                doc['q_table'] = None
            doc['buffer'] = BufferDTO.from_domain(agent.buffer)
        return cls(**doc)

    @classmethod
    def from_training(cls, result: TrainingResult, config_hash: str, seed: int) -> 'CheckpointDTO':
        return cls.from_agent(result.agent, config_hash, seed, result.episodes_completed,
                              result.total_steps, result.rng_states())

    @property
    def n_components(self) -> int:
        return self.mixture.prior.d.shape[0] if self.mixture is not None else 0

    def stored_config(self) -> AgentConfig:
        """
        The configuration the agent was trained with.

        Documents without one get the defaults for their agent kind.

        Raises:
            CheckpointError: The stored configuration is not a valid AgentConfig
        """
        if self.agent_config is None:
            return AgentConfig(agent_kind=self.agent_kind)
        fields = dict(self.agent_config)
        try:
            env = EnvConfig(**fields.pop('env', {}))
            cfg = AgentConfig(env=env, **fields)
        except (TypeError, TGMError) as e:
            raise CheckpointError(f"checkpoint holds an invalid agent configuration: {e}",
                                  error=str(e))
        if cfg.agent_kind != self.agent_kind:
            raise CheckpointError("stored configuration is for another agent kind",
                                  agent_kind=self.agent_kind, config_kind=cfg.agent_kind)
        return cfg

    def to_agent(self, cfg: Optional[AgentConfig] = None,
                 spec: Optional[MazeSpec] = None) -> Agent:
        """
        Rebuild the agent, with `cfg` overriding the stored configuration.

        Raises:
            CheckpointError: The stored arrays or configuration do not form a valid model
        """
        cfg = cfg or self.stored_config()
        try:
            if self.agent_kind == 'tabular':
                if self.q_table is None:
                    raise CheckpointError("tabular checkpoint has no Q-table")
                agent = TabularQAgent(cfg, q=self.q_table.to_domain())
                if spec is not None:
                    agent.bind(spec)
                agent.total_steps = self.total_steps
                return agent

            agent = TGMAgent(cfg)
            if self.mixture is not None:
                agent.state = self.mixture.to_domain()
                k = agent.state.n_components
                agent.tensor = (self.transitions.to_domain() if self.transitions is not None
                                else TransitionTensor.uniform(agent.n_actions, k))
                agent.ledger = (ComponentLedger(tuple(e.to_domain() for e in self.ledger))
                                if self.ledger else ComponentLedger((LedgerEntry(),) * k))
                if self.q_table is not None:
                    agent.q = self.q_table.to_domain()
                else:
                    agent.q = QTable.zeros(agent.n_actions, k, agent.cfg.learning_rate,
                                           agent.cfg.discount)
                agent._transitions = expected_transitions(agent.tensor)
            if self.buffer is not None:
                agent.buffer = self.buffer.to_domain()
            agent.total_steps = self.total_steps
            agent.episodes_started = self.episodes_completed
            return agent
        except CheckpointError:
            raise
        except TGMError as e:
            raise CheckpointError(f"checkpoint holds an invalid model: {e.message}",
                                  error=str(e))


def save_checkpoint(doc: CheckpointDTO, path: Union[str, Path]) -> Path:
    """Write the checkpoint atomically (temporary file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as fh:
            fh.write(doc.model_dump_json(indent=2))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: Union[str, Path]) -> CheckpointDTO:
    """
    Read and validate a checkpoint document.

    Raises:
        CheckpointError: Missing or unreadable file, invalid JSON, unknown
            format version or schema violation
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e.strerror or e}", path=str(path))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e.msg}", path=str(path),
                              line=e.lineno)
    if not isinstance(raw, dict):
        raise CheckpointError("checkpoint must be a JSON object", path=str(path))
    if raw.get('format_version') != FORMAT_VERSION:
        raise CheckpointError("unsupported checkpoint format version", path=str(path),
                              format_version=raw.get('format_version'))
    try:
        return CheckpointDTO.model_validate(raw)
    except ValidationError as e:
        raise CheckpointError("checkpoint does not match the schema", path=str(path),
                              errors=e.error_count())
