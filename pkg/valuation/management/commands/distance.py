from django.core.management.base import BaseCommand

from valuation.config import load_run_config
from valuation.datasets import Coalition
from valuation.kernel import CoalitionDistances, KernelFamily, KernelSpec
from valuation.conf import valuation_settings
from valuation.management.options import (
    add_dataset_arguments, command_errors, overrides, read_coalitions, write_output,
)
from valuation.pipeline import load_owners, render_json
from valuation.transport import SWParams, TransportSpace, ssw_distance


class Command(BaseCommand):
    help = 'Pairwise transport distances between coalition datasets, as JSON keyed by coalition bit-pattern'

    def add_arguments(self, parser):
        add_dataset_arguments(parser)
        parser.add_argument('--coalitions', help='JSON list of coalition bit-patterns (default: every single owner and the grand coalition)')
        parser.add_argument('--metric', choices=['sw', 'ssw', 'otdd'], default='ssw')
        parser.add_argument('--p', type=int, choices=[1, 2], help='order of the Wasserstein distance')
        parser.add_argument('--eta', type=float, help='feature weight of the supervised transform')
        parser.add_argument('--projections', type=int)
        parser.add_argument('--reduction', choices=['per_slice', 'pooled'])
        parser.add_argument('--output', help='write JSON here instead of stdout')

    def handle(self, *args, **options):
        with command_errors():
            config = load_run_config(options['config'], overrides(options))
            owners = load_owners(config, holdout=False).owners
            n = len(owners)
            if options['coalitions']:
                coalitions = read_coalitions(options['coalitions'], n)
            else:
                coalitions = [Coalition.of([owner]) for owner in range(n)] + [Coalition.grand(n)]
            coalitions = list(dict.fromkeys(coalitions))

            sw = SWParams.from_settings(
                p=options['p'], n_projections=options['projections'], seed=config.seed, reduction=options['reduction'],
            )
            distance = self.metric(options['metric'], owners, sw, options['eta'] or valuation_settings.ETA)

            matrix = {
                a.key: {b.key: distance(a, b) for b in coalitions}
                for a in coalitions
            }
            payload = {
                'metric': options['metric'],
                'p': sw.p,
                'projections': sw.n_projections,
                'coalitions': [c.key for c in coalitions],
                'distances': matrix,
            }
            write_output(self, render_json(payload), options['output'])

    def metric(self, name, owners, sw, eta):
        if name == 'sw':
            space = TransportSpace(owners, sw)
            return lambda a, b: 0.0 if a == b else space.distance(a, b)

        distances = CoalitionDistances(owners, sw=sw)
        if name == 'otdd':
            spec = KernelSpec(KernelFamily.OTDD_EXP, sw=sw)
            return lambda a, b: distances.distance(spec, a, b)

        space = distances.space(eta, sw)
        return lambda a, b: 0.0 if a == b else ssw_distance(a, b, space, sw)
