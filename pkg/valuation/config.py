"""
Run configuration
JSON file first, command-line overrides on top, engine settings for whatever
is still unset; validated by ``RunConfigSerializer``.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .conf import valuation_settings
from .exceptions import ConfigError
from .serializers import RunConfigSerializer


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = 'moons'
    csv_path: Optional[str] = None
    target_column: str = 'target'
    owner_column: str = 'owner'
    task: str = 'classification'
    n_owners: int = 6
    points_per_owner: int = 40
    noise: float = 0.1
    centers: Optional[List[List[float]]] = None
    spread: float = 1.0
    assignment: Optional[List[List[int]]] = None
    validation_fraction: Optional[float] = None
    utility: str = 'knn:5'
    kernels: tuple = ('ssw_sq_exp', 'ssw_l1_exp')
    gammas: Optional[List[float]] = None
    noise_vars: Optional[List[float]] = None
    rhos: Optional[List[float]] = None
    etas: Optional[List[float]] = None
    projections: Optional[int] = None
    method: str = 'exact'
    semivalue: str = 'shapley'
    budget: Optional[int] = None
    actual_fraction: float = 0.5
    active_fraction: float = 0.0
    checkpoints: Optional[int] = None
    seed: int = 0
    threads: Optional[int] = None
    output: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'kernels', tuple(self.kernels))

    @property
    def holdout(self) -> float:
        return self.validation_fraction or valuation_settings.VALIDATION_FRACTION

    @property
    def n_checkpoints(self) -> int:
        return self.checkpoints or valuation_settings.UNCERTAINTY_CHECKPOINTS

    @property
    def label(self) -> str:
        label = f"{self.method}-{'+'.join(self.kernels)}-f{self.actual_fraction:g}"
        if self.active_fraction:
            label += f"-a{self.active_fraction:g}"
        return label

    def as_dict(self) -> Dict:
        data = asdict(self)
        data['kernels'] = list(self.kernels)
        return data


def validate_config(data: Dict) -> RunConfig:
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(f"invalid run configuration: {json.dumps(serializer.errors, default=str)}")
    return RunConfig(**serializer.validated_data)


def load_run_config(path=None, overrides: Optional[Dict] = None) -> RunConfig:
    """Merge the JSON file at ``path`` with ``overrides``; overrides that are None are ignored."""
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    config = validate_config(data)
    logger.debug(f"Run configuration: {config.as_dict()}")
    return config
