from django.core.management.base import BaseCommand, CommandError

from valuation.config import load_run_config
from valuation.datasets import write_csv
from valuation.management.options import CONFIG_ERROR, command_errors, json_argument
from valuation.pipeline import load_owners


class Command(BaseCommand):
    help = 'Write a synthetic multi-owner dataset (moons or blobs) to CSV'

    def add_arguments(self, parser):
        parser.add_argument('--generator', choices=['moons', 'blobs'], default='moons')
        parser.add_argument('--owners', type=int, default=6)
        parser.add_argument('--points', type=int, default=40, help='points per owner')
        parser.add_argument('--noise', type=float, default=0.1, help='moons noise')
        parser.add_argument('--centers', type=json_argument, help='blobs: JSON list of class centers')
        parser.add_argument('--spread', type=float, default=1.0, help='blobs: standard deviation')
        parser.add_argument('--assignment', type=json_argument, help='blobs: JSON list of class lists, one per owner')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--output', required=True, help='CSV path')

    def handle(self, *args, **options):
        with command_errors():
            config = load_run_config(overrides={
                'dataset': options['generator'],
                'n_owners': options['owners'],
                'points_per_owner': options['points'],
                'noise': options['noise'],
                'centers': options['centers'],
                'spread': options['spread'],
                'assignment': options['assignment'],
                'seed': options['seed'],
            })
            owners = load_owners(config, holdout=False).owners
            try:
                path = write_csv(owners, options['output'])
            except OSError as exc:
                raise CommandError(f"cannot write {options['output']}: {exc}", returncode=CONFIG_ERROR) from exc
            rows = sum(owner.n_rows for owner in owners)
            self.stdout.write(self.style.SUCCESS(f"{rows} rows for {len(owners)} owners written to {path}"))
