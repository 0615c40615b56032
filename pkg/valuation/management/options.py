"""
Shared command-line options and error handling for the valuation commands.
"""

import json
from contextlib import contextmanager
from pathlib import Path

from django.core.management.base import CommandError

from ..datasets import Coalition
from ..exceptions import ConfigError, NumericalError, PipelineError, ValuationError


CONFIG_ERROR = 2
NUMERICAL_ERROR = 3


def json_argument(value):
    try:
        return json.loads(value)
    except ValueError as exc:
        raise CommandError(f"not valid JSON: {value}", returncode=CONFIG_ERROR) from exc


def add_dataset_arguments(parser):
    group = parser.add_argument_group('dataset')
    group.add_argument('--config', help='JSON run configuration; flags override its values')
    group.add_argument('--dataset', choices=['moons', 'blobs', 'csv'])
    group.add_argument('--csv', dest='csv_path', help='CSV with one row per data point')
    group.add_argument('--target-column')
    group.add_argument('--owner-column')
    group.add_argument('--task', choices=['classification', 'regression'])
    group.add_argument('--owners', dest='n_owners', type=int)
    group.add_argument('--points', dest='points_per_owner', type=int, help='points per owner')
    group.add_argument('--noise', type=float)
    group.add_argument('--centers', type=json_argument, help='JSON list of class centers')
    group.add_argument('--spread', type=float)
    group.add_argument('--assignment', type=json_argument, help='JSON list of class lists, one per owner')
    group.add_argument('--validation-fraction', type=float)
    group.add_argument('--seed', type=int)
    group.add_argument('--threads', type=int)


DATASET_OPTIONS = (
    'dataset', 'csv_path', 'target_column', 'owner_column', 'task', 'n_owners',
    'points_per_owner', 'noise', 'centers', 'spread', 'assignment',
    'validation_fraction', 'seed', 'threads',
)


def overrides(options, names=DATASET_OPTIONS):
    return {name: options.get(name) for name in names}


def read_coalitions(path, n_owners=None):
    """A JSON list of coalition bit-patterns (integers or decimal strings)."""
    try:
        raw = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read coalition list {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path} must hold a non-empty JSON list of coalition bit-patterns")
    try:
        coalitions = [Coalition.from_key(key) for key in raw]
    except (TypeError, ValueError, ValuationError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if n_owners is not None:
        limit = Coalition.grand(n_owners).members
        outside = [str(c) for c in coalitions if c.members & ~limit]
        if outside:
            raise ConfigError(f"coalitions {outside} name owners beyond the {n_owners} loaded")
    return coalitions


def write_output(command, payload: bytes, path=None):
    if path:
        Path(path).write_bytes(payload)
        command.stdout.write(command.style.SUCCESS(f"Written {path}"))
    else:
        command.stdout.write(payload.decode('utf-8'), ending='')


@contextmanager
def command_errors():
    """Map engine errors onto exit codes: 2 configuration, 3 numerical, 1 anything else."""
    try:
        yield
    except ValuationError as exc:
        cause = exc.cause if isinstance(exc, PipelineError) else exc
        if isinstance(cause, ConfigError):
            raise CommandError(str(exc), returncode=CONFIG_ERROR) from exc
        if isinstance(cause, NumericalError):
            raise CommandError(str(exc), returncode=NUMERICAL_ERROR) from exc
        raise CommandError(str(exc)) from exc
