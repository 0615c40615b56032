from rest_framework import serializers

from .kernel import KernelFamily
from .semivalue import SemivalueKind


DATASETS = ['moons', 'blobs', 'csv']
METHODS = ['exact', 'permutation']


class RunConfigSerializer(serializers.Serializer):
    """Validates a merged run configuration before any computation starts."""

    # data source
    dataset = serializers.ChoiceField(choices=DATASETS, default='moons')
    csv_path = serializers.CharField(required=False, allow_null=True, default=None)
    target_column = serializers.CharField(default='target')
    owner_column = serializers.CharField(default='owner')
    task = serializers.ChoiceField(choices=['classification', 'regression'], default='classification')
    n_owners = serializers.IntegerField(min_value=1, max_value=64, default=6)
    points_per_owner = serializers.IntegerField(min_value=2, default=40)
    noise = serializers.FloatField(min_value=0.0, default=0.1)
    centers = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=1),
        required=False, allow_null=True, default=None,
    )
    spread = serializers.FloatField(min_value=0.0, default=1.0)
    assignment = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=1),
        required=False, allow_null=True, default=None,
    )
    validation_fraction = serializers.FloatField(required=False, allow_null=True, default=None)

    # utility and kernel
    utility = serializers.CharField(default='knn:5')
    kernels = serializers.ListField(
        child=serializers.ChoiceField(choices=[family.value for family in KernelFamily]),
        min_length=1, default=lambda: [KernelFamily.SSW_SQ_EXP.value, KernelFamily.SSW_L1_EXP.value],
    )
    gammas = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1,
                                   required=False, allow_null=True, default=None)
    noise_vars = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1,
                                       required=False, allow_null=True, default=None)
    rhos = serializers.ListField(child=serializers.FloatField(), min_length=1,
                                 required=False, allow_null=True, default=None)
    etas = serializers.ListField(child=serializers.FloatField(), min_length=1,
                                 required=False, allow_null=True, default=None)
    projections = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    # valuation
    method = serializers.ChoiceField(choices=METHODS, default='exact')
    semivalue = serializers.ChoiceField(
        choices=[SemivalueKind.SHAPLEY.value, SemivalueKind.BANZHAF.value], default=SemivalueKind.SHAPLEY.value
    )
    budget = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    actual_fraction = serializers.FloatField(default=0.5)
    active_fraction = serializers.FloatField(default=0.0)
    checkpoints = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    # run
    seed = serializers.IntegerField(min_value=0, default=0)
    threads = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    output = serializers.CharField(required=False, allow_null=True, default=None)

    def validate_actual_fraction(self, value):
        if not 0 < value <= 1:
            raise serializers.ValidationError("actual fraction must be in (0, 1]")
        return value

    def validate_active_fraction(self, value):
        if not 0 <= value <= 1:
            raise serializers.ValidationError("active fraction must be in [0, 1]")
        return value

    def validate_validation_fraction(self, value):
        if value is not None and not 0 < value < 1:
            raise serializers.ValidationError("validation fraction must be in (0, 1)")
        return value

    def validate_rhos(self, value):
        if value is not None and any(not 0 < rho <= 1 for rho in value):
            raise serializers.ValidationError("rho values must be in (0, 1]")
        return value

    def validate_etas(self, value):
        if value is not None and any(not 0 < eta <= 1 for eta in value):
            raise serializers.ValidationError("eta values must be in (0, 1]")
        return value

    def validate_gammas(self, value):
        if value is not None and any(gamma <= 0 for gamma in value):
            raise serializers.ValidationError("gamma values must be positive")
        return value

    def validate(self, data):
        if data['dataset'] == 'csv' and not data.get('csv_path'):
            raise serializers.ValidationError({'csv_path': "a csv dataset needs csv_path"})
        if data['dataset'] == 'blobs':
            if not data.get('centers') or not data.get('assignment'):
                raise serializers.ValidationError("a blobs dataset needs centers and assignment")
            if len(data['assignment']) != data['n_owners']:
                raise serializers.ValidationError({'assignment': "one class list per owner"})
        if data['dataset'] != 'csv' and data['task'] != 'classification':
            raise serializers.ValidationError({'task': "synthetic generators produce classification data"})
        if data['method'] == 'permutation':
            if data.get('budget') is None:
                raise serializers.ValidationError({'budget': "the permutation method needs a coalition budget"})
            if data['semivalue'] != SemivalueKind.SHAPLEY.value:
                raise serializers.ValidationError({'semivalue': "permutation sampling estimates Shapley values"})
        return data


class OwnerValueSerializer(serializers.Serializer):
    owner = serializers.IntegerField()
    mean = serializers.FloatField()
    std_gp = serializers.FloatField(min_value=0.0)
    std_mc = serializers.FloatField(min_value=0.0, allow_null=True)
    total_std_bound = serializers.FloatField(read_only=True)


class ProvenanceRowSerializer(serializers.Serializer):
    key = serializers.CharField()
    members = serializers.CharField()
    source = serializers.ChoiceField(choices=['actual', 'predicted'])
    utility = serializers.FloatField()
    std = serializers.FloatField(min_value=0.0)
    degenerate = serializers.BooleanField()


class SemivalueReportSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=METHODS)
    semivalue = serializers.CharField()
    n_actual = serializers.IntegerField(min_value=0)
    n_predicted = serializers.IntegerField(min_value=0)
    kernel = serializers.DictField(allow_null=True, required=False)
    values = OwnerValueSerializer(many=True)
    coalitions = ProvenanceRowSerializer(many=True, required=False)

    def validate(self, data):
        owners = [value['owner'] for value in data['values']]
        if len(set(owners)) != len(owners):
            raise serializers.ValidationError({'values': "each owner appears once"})
        rows = data.get('coalitions')
        if rows and len(rows) != data['n_actual'] + data['n_predicted']:
            raise serializers.ValidationError({'coalitions': "provenance rows must match the coalition counts"})
        return data


class ValueMetricsSerializer(serializers.Serializer):
    mse = serializers.FloatField()
    pearson = serializers.FloatField(allow_null=True)
    kendall_tau = serializers.FloatField(allow_null=True)


class MethodComparisonSerializer(serializers.Serializer):
    label = serializers.CharField()
    runs = serializers.IntegerField()
    mse_mean = serializers.FloatField()
    mse_std = serializers.FloatField()
    pearson_mean = serializers.FloatField(allow_null=True)
    pearson_std = serializers.FloatField(allow_null=True)
    kendall_tau_mean = serializers.FloatField(allow_null=True)
    kendall_tau_std = serializers.FloatField(allow_null=True)
