from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.core.management.base import BaseCommand

from valuation.conf import valuation_settings
from valuation.experiments import active_selection_trial, eta_ablation, moons_setup, utility_prediction_trial
from valuation.kernel import KernelFamily
from valuation.management.options import command_errors, json_argument, write_output
from valuation.pipeline import render_json
from valuation.transport import SWParams


class Command(BaseCommand):
    help = 'Desk-scale experiments on make_moons owners with a k-NN utility'

    def add_arguments(self, parser):
        parser.add_argument('kind', choices=['prediction', 'active', 'eta'])
        parser.add_argument('--owners', type=int, default=6)
        parser.add_argument('--points', type=int, default=40, help='points per owner')
        parser.add_argument('--noise', type=float, default=0.1)
        parser.add_argument('--k', type=int, default=5, help='neighbours of the k-NN utility')
        parser.add_argument('--seeds', type=int, default=10)
        parser.add_argument('--actual-fraction', type=float, default=0.5)
        parser.add_argument('--extra', type=int, default=10, help='active: coalitions added to the evaluated set')
        parser.add_argument('--kernel', dest='kernels', action='append',
                            choices=[family.value for family in KernelFamily],
                            help='prediction: kernel families to compare (default ssw_sq_exp and binary_rbf)')
        parser.add_argument('--etas', type=json_argument, help='eta: JSON list of eta values')
        parser.add_argument('--projections', type=int)
        parser.add_argument('--threads', type=int)
        parser.add_argument('--output', help='write JSON here instead of stdout')

    def handle(self, *args, **options):
        seeds = range(options['seeds'])
        sw = SWParams.from_settings(n_projections=options['projections'])
        fraction = options['actual_fraction']

        with command_errors(), ThreadPoolExecutor(max_workers=options['threads'] or valuation_settings.THREADS) as pool:
            setup = moons_setup(
                options['owners'], options['points'], options['noise'], options['k'], sw=sw, executor=pool,
            )
            self.stdout.write(f"{len(setup.coalitions)} coalitions evaluated")

            if options['kind'] == 'prediction':
                families = options['kernels'] or [KernelFamily.SSW_SQ_EXP.value, KernelFamily.BINARY_RBF.value]
                result = {}
                for family in families:
                    scores = [utility_prediction_trial(setup, family, fraction, seed, pool) for seed in seeds]
                    pearsons = [s.pearson for s in scores if s.pearson is not None]
                    result[family] = {
                        'mse': float(np.mean([s.mse for s in scores])),
                        'pearson': float(np.mean(pearsons)) if pearsons else None,
                    }
            elif options['kind'] == 'active':
                trials = [
                    active_selection_trial(setup, options['extra'], fraction, seed, executor=pool) for seed in seeds
                ]
                result = {
                    'active_variance': float(np.mean([t.active_variance for t in trials])),
                    'random_variance': float(np.mean([t.random_variance for t in trials])),
                }
            else:
                etas = options['etas'] or valuation_settings.ETA_GRID
                result = {
                    str(eta): mse
                    for eta, mse in eta_ablation(setup, etas, fraction, list(seeds), pool).items()
                }

            write_output(self, render_json({'experiment': options['kind'], 'runs': len(seeds), 'results': result}),
                         options['output'])
