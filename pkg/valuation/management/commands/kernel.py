from django.core.management.base import BaseCommand

from valuation.config import load_run_config
from valuation.conf import valuation_settings
from valuation.kernel import CoalitionDistances, KernelFamily, KernelSpec, build_matrix, psd_check
from valuation.management.options import (
    add_dataset_arguments, command_errors, overrides, read_coalitions, write_output,
)
from valuation.pipeline import load_owners, render_json
from valuation.transport import SWParams


class Command(BaseCommand):
    help = 'Kernel matrix over a list of coalitions with its eigenvalue range and PSD verdict'

    def add_arguments(self, parser):
        add_dataset_arguments(parser)
        parser.add_argument('--coalitions', required=True, help='JSON list of coalition bit-patterns')
        parser.add_argument('--kernel', choices=[family.value for family in KernelFamily],
                            default=KernelFamily.SSW_SQ_EXP.value)
        parser.add_argument('--gamma', type=float, default=1.0)
        parser.add_argument('--rho', type=float, default=1.0)
        parser.add_argument('--eta', type=float)
        parser.add_argument('--projections', type=int)
        parser.add_argument('--tolerance', type=float, default=1e-8)
        parser.add_argument('--output', help='write JSON here instead of stdout')

    def handle(self, *args, **options):
        with command_errors():
            config = load_run_config(options['config'], overrides(options))
            owners = load_owners(config, holdout=False).owners
            coalitions = read_coalitions(options['coalitions'], len(owners))

            sw = SWParams.from_settings(
                rho=options['rho'], n_projections=options['projections'], seed=config.seed,
            )
            spec = KernelSpec(options['kernel'], options['gamma'], sw, options['eta'] or valuation_settings.ETA)
            matrix = build_matrix(spec, coalitions, coalitions, CoalitionDistances(owners, sw=sw))
            report = psd_check(matrix, options['tolerance'])

            payload = {
                'kernel': spec.describe(),
                'coalitions': [c.key for c in coalitions],
                'matrix': matrix.entries.tolist(),
                'min_eigenvalue': report.min_eigenvalue,
                'max_eigenvalue': report.max_eigenvalue,
                'psd': report.passed,
            }
            write_output(self, render_json(payload), options['output'])
            if not report.passed:
                self.stderr.write(self.style.WARNING(
                    f"Kernel matrix failed the PSD check (min eigenvalue {report.min_eigenvalue:.3e})"
                ))
