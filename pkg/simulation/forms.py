from django import forms

from core.conf import fusion_setting
from core.forms import ConfigForm, FloatListField

from .scenarios import KINDS, ScenarioSpec

SCENARIO_CHOICES = [(k, k) for k in KINDS]


class SimulateConfigForm(ConfigForm):
    scenario = forms.ChoiceField(choices=SCENARIO_CHOICES)
    n_internal = forms.IntegerField(min_value=1, required=False)
    n_external = forms.IntegerField(min_value=1, required=False)
    mc_replicates = forms.IntegerField(min_value=1, initial=200)
    offsets = FloatListField(required=False)
    rho_grid = FloatListField(required=False)
    coverage_replicates = forms.IntegerField(min_value=0, initial=0)
    missing_rate = forms.FloatField(required=False)
    seed = forms.IntegerField(min_value=0, initial=0)
    ci_level = forms.FloatField(initial=lambda: fusion_setting('CI_LEVEL'))
    eval_rows = forms.IntegerField(min_value=1, required=False)
    workers = forms.IntegerField(min_value=1, required=False)
    output_dir = forms.CharField(initial='output')
    plots = forms.BooleanField(required=False)

    def clean_ci_level(self):
        ci_level = self.cleaned_data['ci_level']
        if not 0.0 < ci_level < 1.0:
            raise forms.ValidationError('CI_LEVEL must lie strictly between 0 and 1')
        return ci_level

    def clean_offsets(self):
        offsets = self.cleaned_data['offsets']
        if any(o < 0 for o in offsets):
            raise forms.ValidationError('Offsets must be nonnegative')
        return offsets

    def scenario_spec(self) -> ScenarioSpec:
        """Scenario defaults overridden by whatever the config sets"""
        data = self.cleaned_data
        return ScenarioSpec.defaults(
            data['scenario'],
            n_internal=data['n_internal'],
            n_external=data['n_external'],
            offsets=tuple(data['offsets']) or None,
            mc_replicates=data['mc_replicates'],
            base_seed=data['seed'],
            rho_grid=tuple(data['rho_grid']) or None,
            missing_rate=data['missing_rate'],
            coverage_replicates=data['coverage_replicates'],
            ci_level=data['ci_level'],
            eval_rows=data['eval_rows'],
            workers=data['workers'],
        )
