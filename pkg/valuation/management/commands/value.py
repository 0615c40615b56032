from django.core.management.base import BaseCommand

from valuation.config import load_run_config
from valuation.kernel import KernelFamily
from valuation.management.options import (
    DATASET_OPTIONS, add_dataset_arguments, command_errors, json_argument, overrides, write_output,
)
from valuation.pipeline import render_json, report_data, run_valuation, write_artifacts


VALUE_OPTIONS = DATASET_OPTIONS + (
    'utility', 'kernels', 'gammas', 'noise_vars', 'rhos', 'etas', 'projections',
    'method', 'semivalue', 'budget', 'actual_fraction', 'active_fraction', 'checkpoints', 'output',
)


class Command(BaseCommand):
    help = 'Value every data owner: evaluate part of the coalitions, predict the rest with a GP'

    def add_arguments(self, parser):
        add_dataset_arguments(parser)
        parser.add_argument('--utility', help='knn:k | ridge:lambda | logistic[:steps[:lr]] | table:path')
        parser.add_argument('--kernel', dest='kernels', action='append',
                            choices=[family.value for family in KernelFamily],
                            help='kernel family; repeat to let the likelihood choose')
        parser.add_argument('--gammas', type=json_argument, help='JSON list of gamma values')
        parser.add_argument('--noise-vars', type=json_argument, help='JSON list of noise variances')
        parser.add_argument('--rhos', type=json_argument, help='JSON list of rho values')
        parser.add_argument('--etas', type=json_argument, help='JSON list of eta values')
        parser.add_argument('--projections', type=int)
        parser.add_argument('--method', choices=['exact', 'permutation'])
        parser.add_argument('--semivalue', choices=['shapley', 'banzhaf'])
        parser.add_argument('--budget', type=int, help='coalitions to sample (permutation method)')
        parser.add_argument('--actual-fraction', type=float)
        parser.add_argument('--active-fraction', type=float)
        parser.add_argument('--checkpoints', type=int, help='points on the uncertainty curve')
        parser.add_argument('--output', help='directory for report.json, uncertainty.csv and labels.json')

    def handle(self, *args, **options):
        with command_errors():
            config = load_run_config(options['config'], overrides(options, VALUE_OPTIONS))
            run = run_valuation(config)

            for value in run.report.values:
                line = f"owner {value.owner}: {value.mean:.6f} +/- {value.std_gp:.6f}"
                if value.std_mc is not None:
                    line += f" (mc {value.std_mc:.6f})"
                self.stdout.write(line)

            if config.output:
                paths = write_artifacts(run, config.output)
                self.stdout.write(self.style.SUCCESS(
                    f"{run.report.n_actual} evaluated, {run.report.n_predicted} predicted; report in {paths['report']}"
                ))
            else:
                write_output(self, render_json(report_data(run.report)))
