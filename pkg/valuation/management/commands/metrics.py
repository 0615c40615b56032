from django.core.management.base import BaseCommand

from valuation.management.options import command_errors, write_output
from valuation.pipeline import compare_reports, load_report, render_json
from valuation.serializers import ValueMetricsSerializer


class Command(BaseCommand):
    help = 'MSE, Pearson correlation and Kendall tau between two valuation reports'

    def add_arguments(self, parser):
        parser.add_argument('report', help='report to score')
        parser.add_argument('reference', help='reference report, e.g. an exact run')
        parser.add_argument('--output', help='write JSON here instead of stdout')

    def handle(self, *args, **options):
        with command_errors():
            metrics = compare_reports(load_report(options['report']), load_report(options['reference']))
            write_output(self, render_json(ValueMetricsSerializer(metrics).data), options['output'])
