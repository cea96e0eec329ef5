"""
TGM 智能體命令行介面

Subcommands:
    train    train one agent per seed and write checkpoints, metrics and a summary
    inspect  print the components, transition matrices and Q-table of a checkpoint
    eval     run greedy episodes from a checkpoint, optionally against ground truth

Exit codes: 0 ok, 1 invalid configuration, 2 maze parse failure,
3 runtime failure, 4 corrupt checkpoint.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.application.agent import AgentConfig, TGMAgent, train
from src.application.dto import CheckpointDTO, config_hash, load_checkpoint, save_checkpoint
from src.application.evaluation import evaluate_policy, learned_cell_map, transition_report
from src.core.algorithms.transition import expected_transitions
from src.core.domain.maze import Action, EnvConfig, MazeSpec, load_maze
from src.exceptions import CheckpointError, ConfigurationError, MazeParseError, TGMError
from src.logging_config import EventLog, LogContext, get_cli_logger

logger = get_cli_logger()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAZE = 2
EXIT_RUNTIME = 3
EXIT_CHECKPOINT = 4

# Fields of RunConfig that do not change what a run computes
_NOT_HASHED = {'output', 'workers'}


class RunConfig(BaseModel):
    """Effective run configuration: defaults, overridden by a config file, overridden by flags."""
    model_config = ConfigDict(extra='forbid')

    maze: Optional[str] = None
    episodes: int = Field(200, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    output: str = "runs/latest"
    agent: Literal['tgm', 'tabular'] = 'tgm'
    workers: int = Field(1, ge=1)
    final_window: int = Field(50, ge=1)

    checkpoint_period: int = Field(100, ge=1)
    kl_threshold: float = Field(0.5, gt=0)
    persistence_threshold: int = Field(4, ge=1)
    bandwidth: float = Field(0.5, gt=0)
    novelty_mahalanobis: float = Field(3.0, gt=0)
    discovery_min_points: int = Field(5, ge=1)
    vgm_sweeps: int = Field(50, ge=1)
    learning_rate: float = Field(0.1, gt=0, le=1)
    discount: float = Field(0.9, ge=0, le=1)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    epsilon_decay_fraction: float = Field(0.5, ge=0, le=1)
    q_update_mode: Literal['batched', 'per_step'] = 'batched'
    max_total_steps: Optional[int] = Field(None, ge=0)

    obs_noise: float = Field(0.1, ge=0)
    reward_goal: float = 1.0
    reward_step: float = 0.0
    max_steps: int = Field(200, ge=1)

    def to_agent_config(self, seed: int) -> AgentConfig:
        return AgentConfig(
            checkpoint_period=self.checkpoint_period,
            kl_threshold=self.kl_threshold,
            persistence_threshold=self.persistence_threshold,
            bandwidth=self.bandwidth,
            novelty_mahalanobis=self.novelty_mahalanobis,
            discovery_min_points=self.discovery_min_points,
            vgm_sweeps=self.vgm_sweeps,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_fraction=self.epsilon_decay_fraction,
            learning_rate=self.learning_rate,
            discount=self.discount,
            q_update_mode=self.q_update_mode,
            max_total_steps=self.max_total_steps,
            seed=seed,
            agent_kind=self.agent,
            env=EnvConfig(obs_noise=self.obs_noise, reward_goal=self.reward_goal,
                          reward_step=self.reward_step, max_steps=self.max_steps),
        )

    def hash(self) -> str:
        return config_hash(self.model_dump(exclude=_NOT_HASHED))


def parse_seeds(text: str) -> List[int]:
    """'0..4' (inclusive range), '0,1,2' or a single integer."""
    text = text.strip()
    try:
        if '..' in text:
            lo, hi = text.split('..', 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigurationError("seeds must look like 0..4 or 0,1,2", parameter='seeds',
                                 value=text)
    if not seeds:
        raise ConfigurationError("seed list is empty", parameter='seeds', value=text)
    return seeds


# Flag destination -> RunConfig field
_TRAIN_FLAGS = (
    'maze', 'episodes', 'output', 'agent', 'workers', 'checkpoint_period', 'kl_threshold',
    'persistence_threshold', 'learning_rate', 'discount', 'bandwidth', 'vgm_sweeps',
    'epsilon_start', 'epsilon_end', 'q_update_mode', 'obs_noise', 'max_steps',
    'max_total_steps',
)


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge defaults, the optional JSON config file and explicit flags.

    Raises:
        ConfigurationError: Unreadable config file or invalid values
    """
    values: Dict[str, Any] = {}
    if getattr(args, 'config', None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding='utf-8'))
        except OSError as e:
            raise ConfigurationError(f"cannot read config file: {e.strerror or e}",
                                     parameter='config', value=str(path))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file is not valid JSON: {e.msg}",
                                     parameter='config', value=str(path))
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object",
                                     parameter='config', value=str(path))
        values.update(loaded)

    for name in _TRAIN_FLAGS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, 'seeds', None) is not None:
        values['seeds'] = parse_seeds(args.seeds)

    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(f"invalid configuration: {first['msg']}",
                                 parameter='.'.join(str(p) for p in first['loc']),
                                 value=first.get('input'))


def _fail(code: int, error: Exception) -> int:
    logger.error(str(error), extra={'context': {'exit_code': code,
                                                'error_type': type(error).__name__}})
    print(f"錯誤: {error}", file=sys.stderr)
    return code


# train

def run_seed(run_cfg: RunConfig, spec: MazeSpec, seed: int) -> Dict[str, Any]:
    """Train one seed into <output>/seed_<seed>/ and return its summary row."""
    out = Path(run_cfg.output) / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    events = EventLog(out / "events.jsonl", name=f"tgm.events.seed_{seed}")

    with open(metrics_path, 'w', encoding='utf-8') as metrics_file:
        def write_metrics(record) -> None:
            metrics_file.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")

        try:
            result = train(spec, run_cfg.to_agent_config(seed), run_cfg.episodes,
                           events=events, on_episode=write_metrics)
        finally:
            events.close()

    doc = CheckpointDTO.from_training(result, run_cfg.hash(), seed)
    save_checkpoint(doc, out / "checkpoint.json")

    window = result.final_window(run_cfg.final_window)
    return {
        'seed': seed,
        'episodes': result.episodes_completed,
        'final_window_mean_return': float(np.mean([m.return_ for m in window])) if window else 0.0,
        'final_window_success_rate': float(np.mean([m.success for m in window])) if window else 0.0,
    }


def write_summary(rows: List[Dict[str, Any]], path: Path) -> None:
    """Per-seed rows followed by `mean` and `std` rows."""
    fields = ['seed', 'episodes', 'final_window_mean_return', 'final_window_success_rate']
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        for label, reduce in (('mean', np.mean), ('std', np.std)):
            row: Dict[str, Any] = {'seed': label}
            for name in fields[1:]:
                row[name] = float(reduce([r[name] for r in rows]))
            writer.writerow(row)


def cmd_train(args: argparse.Namespace) -> int:
    try:
        run_cfg = resolve_run_config(args)
        if not run_cfg.maze:
            raise ConfigurationError("train requires --maze", parameter='maze')
        run_cfg.to_agent_config(run_cfg.seeds[0])
    except ConfigurationError as e:
        return _fail(EXIT_CONFIG, e)

    try:
        spec = load_maze(run_cfg.maze)
    except MazeParseError as e:
        return _fail(EXIT_MAZE, e)

    out = Path(run_cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(run_cfg.model_dump(), indent=2, sort_keys=True) + "\n", encoding='utf-8')
    except OSError as e:
        return _fail(EXIT_CONFIG, ConfigurationError(f"cannot write output directory: {e}",
                                                     parameter='output', value=str(out)))

    with LogContext(logger, operation="train", maze=spec.name, seeds=run_cfg.seeds) as ctx:
        try:
            if run_cfg.workers > 1 and len(run_cfg.seeds) > 1:
                with ProcessPoolExecutor(max_workers=run_cfg.workers) as pool:
                    futures = [pool.submit(run_seed, run_cfg, spec, s) for s in run_cfg.seeds]
                    rows = [f.result() for f in futures]
            else:
                rows = [run_seed(run_cfg, spec, s) for s in run_cfg.seeds]
        except TGMError as e:
            return _fail(EXIT_RUNTIME, e)
        except Exception as e:
            logger.exception("unexpected failure during training")
            return _fail(EXIT_RUNTIME, e)
        write_summary(rows, out / "summary.csv")
        ctx.log("info", "training run written", output=str(out), seeds=len(rows))

    print(f"完成: {len(rows)} 個種子，結果寫入 {out}")
    return EXIT_OK


# inspect

def _component_rows(doc: CheckpointDTO) -> List[Dict[str, Any]]:
    if doc.mixture is None:
        return []
    post = doc.mixture.posterior.to_domain()
    rows = []
    for k in range(post.n_components):
        entry = doc.ledger[k] if k < len(doc.ledger) else None
        rows.append({
            'component': k,
            'mean': [float(x) for x in post.m[k]],
            'beta': float(post.beta[k]),
            'v': float(post.v[k]),
            'status': entry.status if entry else 'flexible',
            'persistence_count': entry.persistence_count if entry else 0,
        })
    return rows


def _transition_views(doc: CheckpointDTO) -> Dict[str, List[List[float]]]:
    if doc.transitions is None:
        return {}
    matrices = expected_transitions(doc.transitions.to_domain())
    return {Action(a).name.lower(): matrices[a].tolist() for a in range(matrices.shape[0])}


def _q_values(doc: CheckpointDTO) -> Optional[List[List[float]]]:
    return doc.q_table.values.to_array().tolist() if doc.q_table is not None else None


def _print_table(doc: CheckpointDTO, components, transitions, q_values) -> None:
    print(f"agent={doc.agent_kind} episodes={doc.episodes_completed} steps={doc.total_steps} "
          f"seed={doc.seed} K={len(components)}")
    if components:
        print("\n組件:")
        print(f"{'k':>3} {'mean':>22} {'beta':>10} {'v':>10} {'status':>9} {'count':>5}")
        for row in components:
            mean = '(' + ', '.join(f"{x:.3f}" for x in row['mean']) + ')'
            print(f"{row['component']:>3} {mean:>22} {row['beta']:>10.2f} {row['v']:>10.2f} "
                  f"{row['status']:>9} {row['persistence_count']:>5}")
    for name, matrix in transitions.items():
        print(f"\n轉移矩陣 [{name}] (列 = 下一狀態, 欄 = 當前狀態):")
        for line in matrix:
            print(' '.join(f"{p:6.3f}" for p in line))
    if q_values is not None:
        print("\nQ 值 (列 = 動作):")
        for a, line in enumerate(q_values):
            print(f"{Action(a).name.lower():>6} " + ' '.join(f"{x:8.4f}" for x in line))


def _print_csv(components, transitions, q_values) -> None:
    writer = csv.writer(sys.stdout)
    writer.writerow(['section', 'row', 'column', 'value'])
    for row in components:
        for key in ('beta', 'v', 'status', 'persistence_count'):
            writer.writerow(['component', row['component'], key, row[key]])
        for i, x in enumerate(row['mean']):
            writer.writerow(['component', row['component'], f"mean_{i}", repr(x)])
    for name, matrix in transitions.items():
        for i, line in enumerate(matrix):
            for j, p in enumerate(line):
                writer.writerow([f"transition_{name}", i, j, repr(p)])
    for a, line in enumerate(q_values or []):
        for k, x in enumerate(line):
            writer.writerow(['q', Action(a).name.lower(), k, repr(x)])


def _missing_checkpoint(path: Optional[str], command: str) -> Optional[int]:
    """Exit code for an absent --checkpoint file, None when the file exists."""
    if not path:
        return _fail(EXIT_CONFIG, ConfigurationError(f"{command} requires --checkpoint",
                                                     parameter='checkpoint'))
    if not Path(path).is_file():
        return _fail(EXIT_CONFIG, ConfigurationError("checkpoint file does not exist",
                                                     parameter='checkpoint', value=path))
    return None


def cmd_inspect(args: argparse.Namespace) -> int:
    missing = _missing_checkpoint(args.checkpoint, 'inspect')
    if missing is not None:
        return missing
    try:
        doc = load_checkpoint(args.checkpoint)
        doc.to_agent()
    except CheckpointError as e:
        return _fail(EXIT_CHECKPOINT, e)

    components = _component_rows(doc)
    transitions = _transition_views(doc)
    q_values = _q_values(doc)
    if args.format == 'json':
        print(json.dumps({
            'checkpoint': doc.model_dump(mode='json'),
            'components': components,
            'transition_matrices': transitions,
            'q_values': q_values,
        }, ensure_ascii=False))
    elif args.format == 'csv':
        _print_csv(components, transitions, q_values)
    else:
        _print_table(doc, components, transitions, q_values)
    return EXIT_OK


# eval

def cmd_eval(args: argparse.Namespace) -> int:
    missing = _missing_checkpoint(args.checkpoint, 'eval')
    if missing is not None:
        return missing
    try:
        env_cfg = EnvConfig(obs_noise=args.obs_noise, max_steps=args.max_steps)
    except ConfigurationError as e:
        return _fail(EXIT_CONFIG, e)
    try:
        spec = load_maze(args.maze)
    except MazeParseError as e:
        return _fail(EXIT_MAZE, e)
    try:
        doc = load_checkpoint(args.checkpoint)
        agent = doc.to_agent(spec=spec) if doc.agent_kind == 'tabular' else doc.to_agent()
    except CheckpointError as e:
        return _fail(EXIT_CHECKPOINT, e)

    try:
        result = evaluate_policy(agent, spec, env_cfg, args.episodes, args.seed)
        report: Dict[str, Any] = {
            'episodes': result.episodes,
            'success_rate': result.success_rate,
            'mean_steps_to_goal': result.mean_steps_to_goal,
        }
        cell_map = None
        if args.ground_truth and isinstance(agent, TGMAgent) and agent.has_model:
            gt = transition_report(spec, agent.state, agent.tensor)
            report['matched_cells'] = gt.matching.n_matched
            report['floor_cells'] = spec.n_cells
            report['mean_tv_distance'] = gt.mean_tv
            report['fraction_within_0.15'] = gt.fraction_within(0.15)
            cell_map = learned_cell_map(spec, gt.matching)
    except TGMError as e:
        return _fail(EXIT_RUNTIME, e)

    if args.format == 'json':
        if cell_map is not None:
            report['cell_map'] = cell_map.split('\n')
        print(json.dumps(report, ensure_ascii=False))
    else:
        for key, value in report.items():
            print(f"{key}: {value}")
        if cell_map is not None:
            print("\n已學習的格子 (o = 有對應組件, ? = 無):")
            print(cell_map)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='tgm_cli.py',
                                     description='Temporal Gaussian Mixture 迷宮智能體')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='訓練智能體')
    p.add_argument('--maze', help='迷宮文件路徑')
    p.add_argument('--config', help='JSON 配置文件 (命令行參數優先)')
    p.add_argument('--episodes', type=int)
    p.add_argument('--seeds', help='種子: 0..4 或 0,1,2')
    p.add_argument('--output', help='輸出目錄')
    p.add_argument('--agent', choices=['tgm', 'tabular'])
    p.add_argument('--checkpoint-period', dest='checkpoint_period', type=int)
    p.add_argument('--kl-threshold', dest='kl_threshold', type=float)
    p.add_argument('--persistence-threshold', dest='persistence_threshold', type=int)
    p.add_argument('--learning-rate', dest='learning_rate', type=float)
    p.add_argument('--discount', type=float)
    p.add_argument('--bandwidth', type=float)
    p.add_argument('--vgm-sweeps', dest='vgm_sweeps', type=int)
    p.add_argument('--epsilon-start', dest='epsilon_start', type=float)
    p.add_argument('--epsilon-end', dest='epsilon_end', type=float)
    p.add_argument('--q-update-mode', dest='q_update_mode', choices=['batched', 'per_step'])
    p.add_argument('--obs-noise', dest='obs_noise', type=float)
    p.add_argument('--max-steps', dest='max_steps', type=int)
    p.add_argument('--max-total-steps', dest='max_total_steps', type=int)
    p.add_argument('--workers', type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('inspect', help='查看檢查點')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--format', choices=['table', 'json', 'csv'], default='table')
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser('eval', help='貪婪策略評估')
    p.add_argument('--checkpoint')
    p.add_argument('--maze', required=True)
    p.add_argument('--episodes', type=int, default=20)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--obs-noise', dest='obs_noise', type=float, default=0.1)
    p.add_argument('--max-steps', dest='max_steps', type=int, default=200)
    p.add_argument('--ground-truth', dest='ground_truth', action='store_true',
                   help='與真實轉移比較 (組件-格子匹配, TV 距離)')
    p.add_argument('--format', choices=['table', 'json'], default='table')
    p.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)
