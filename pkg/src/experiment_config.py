"""
Experiment configuration: the TOML file read by the `scaling` command and
the per-trial seed derivation shared by every grid runner.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field, ValidationError, root_validator, validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

try:
    from .errors import ConfigError, TSPExperimentError
    from .solvers import EXACT_DP_MAX, BRUTE_FORCE_MAX, SolverTag, parse_solver
    from .spaces import SpaceSpec, derive_seed, space_from_toml_dict
except ImportError:
    from errors import ConfigError, TSPExperimentError
    from solvers import EXACT_DP_MAX, BRUTE_FORCE_MAX, SolverTag, parse_solver
    from spaces import SpaceSpec, derive_seed, space_from_toml_dict

logger = logging.getLogger(__name__)

CHECKS = ('star', 'packing', 'bound-chain', 'isolation', 'lower-bound')
# failures of these fail a verify run; greedy (★) results are informational
GUARANTEED_CHECKS = ('star', 'packing', 'bound-chain', 'lower-bound')
MAX_SEED = 2 ** 64 - 1


def trial_seed(master_seed: int, n: int, trial: int) -> int:
    """Seed of one (n, trial) cell; independent of the order cells are run in."""
    return derive_seed(master_seed, n, trial)


def parse_checks(value: Union[str, Sequence[str]]) -> List[str]:
    names = value.split(',') if isinstance(value, str) else list(value)
    checks: List[str] = []
    for name in (n.strip().lower() for n in names):
        if not name:
            continue
        if name not in CHECKS:
            raise ConfigError(f"unknown check '{name}' (choose from {', '.join(CHECKS)})")
        if name not in checks:
            checks.append(name)
    return checks


class OutputPaths(BaseModel):
    csv: str = 'scaling_records.csv'
    # `json` would shadow BaseModel.json
    json_path: str = Field('scaling_summary.json', alias='json')

    class Config:
        allow_population_by_field_name = True


class WitnessOverride(BaseModel):
    d: Optional[float] = None
    c_lower: Optional[float] = None
    d_upper: Optional[float] = None
    analytic: bool = False


class ExperimentConfig(BaseModel):
    space: SpaceSpec
    solvers: List[SolverTag] = [SolverTag.NEAREST_NEIGHBOR]
    n_grid: List[int]
    trials_per_n: int = 1
    master_seed: int = 0
    checks: List[str] = []
    threads: int = 1
    two_opt_passes: int = 50
    output: OutputPaths = OutputPaths()
    witness: WitnessOverride = WitnessOverride()

    @validator('space', pre=True)
    def parse_space(cls, v):
        if isinstance(v, dict):
            return space_from_toml_dict(v)
        return v

    @validator('solvers', pre=True)
    def parse_solvers(cls, v):
        names = v.split(',') if isinstance(v, str) else v
        tags: List[SolverTag] = []
        for name in names:
            tag = name if isinstance(name, SolverTag) else parse_solver(str(name))
            if tag not in tags:
                tags.append(tag)
        if not tags:
            raise ValueError('solvers must name at least one solver')
        return tags

    @validator('n_grid')
    def validate_grid(cls, v):
        if not v:
            raise ValueError('n_grid must not be empty')
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f'n_grid must be strictly increasing, got {v}')
        if v[0] < 3:
            raise ValueError(f'n_grid values must be >= 3, got {v[0]}')
        return v

    @validator('trials_per_n')
    def validate_trials(cls, v):
        if v < 1:
            raise ValueError(f'trials_per_n must be >= 1, got {v}')
        return v

    @validator('master_seed')
    def validate_seed(cls, v):
        if not 0 <= v <= MAX_SEED:
            raise ValueError(f'master_seed must fit in 64 bits, got {v}')
        return v

    @validator('checks', pre=True)
    def validate_checks(cls, v):
        return parse_checks(v)

    @validator('threads')
    def validate_threads(cls, v):
        if v < 1:
            raise ValueError(f'threads must be >= 1, got {v}')
        return v

    @root_validator(skip_on_failure=True)
    def validate_solver_limits(cls, values):
        largest = values['n_grid'][-1]
        limits = {SolverTag.EXACT_DP: EXACT_DP_MAX, SolverTag.BRUTE_FORCE: BRUTE_FORCE_MAX}
        for tag, limit in limits.items():
            if tag in values['solvers'] and largest > limit:
                raise ValueError(f'{tag.value} accepts n <= {limit}, n_grid reaches {largest}')
        return values


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        messages = '; '.join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f'invalid experiment config: {messages}') from e
    except TSPExperimentError as e:
        raise ConfigError(f'invalid experiment config: {e}') from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f'config file not found: {path}') from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'{path} is not valid TOML: {e}') from e
    config = config_from_dict(data)
    logger.debug(f"Loaded experiment config from {path}: {config.dict()}")
    return config
