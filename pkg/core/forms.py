"""
Run-config validation.

Run configs are KEY=value files read with python-dotenv. Keys are matched to
form fields case-insensitively; the first invalid field becomes a ConfigError.
"""
import logging
from pathlib import Path

from django import forms
from dotenv import dotenv_values

from .conf import fusion_setting
from .datafiles import ColumnRoles
from .equations import (
    FAMILY_IDS, SURROGATE_STACK, TREATMENT_FAMILIES, Dataset, EquationFamily, FeatureMap,
)
from .exceptions import ConfigError
from .shrinkage import A_KINDS, A_PREDICTIVE_SUBSET, LOSS_ALIASES, WeightMatrixSpec
from .transform import CUSTOM, KINDS, Transformation

logger = logging.getLogger(__name__)

FAMILY_CHOICES = [(f, f) for f in FAMILY_IDS]
TRANSFORM_CHOICES = [(k, k) for k in KINDS if k != CUSTOM]
LOSS_CHOICES = [(k, k) for k in dict.fromkeys((*LOSS_ALIASES, *A_KINDS))]
OUTCOME_CHOICES = [('y', 'y'), ('y2', 'y2')]


class CommaListField(forms.CharField):
    """Comma-separated names"""

    def to_python(self, value):
        if isinstance(value, (list, tuple)):
            return list(value)
        text = super().to_python(value)
        return [item.strip() for item in text.split(',') if item.strip()]


class IntListField(CommaListField):
    def to_python(self, value):
        items = super().to_python(value)
        try:
            return [int(item) for item in items]
        except (TypeError, ValueError):
            raise forms.ValidationError('Enter a comma-separated list of integers')


class FloatListField(CommaListField):
    def to_python(self, value):
        items = super().to_python(value)
        try:
            return [float(item) for item in items]
        except (TypeError, ValueError):
            raise forms.ValidationError('Enter a comma-separated list of numbers')


def read_config(path) -> dict:
    """KEY=value pairs of a run config, keys lower-cased"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", field='config')
    return {key.lower(): value for key, value in dotenv_values(path).items()}


class ConfigForm(forms.Form):
    """Base form: field initials fill in keys the config omits"""

    def __init__(self, data, *args, **kwargs):
        merged = {}
        for name, field in self.base_fields.items():
            initial = field.initial() if callable(field.initial) else field.initial
            if initial is not None:
                merged[name] = initial
        merged.update({k: v for k, v in data.items() if v not in (None, '')})
        unknown = set(data) - set(self.base_fields)
        if unknown:
            logger.warning(f"Ignoring unknown config keys: {', '.join(sorted(k.upper() for k in unknown))}")
        super().__init__(merged, *args, **kwargs)

    @classmethod
    def from_file(cls, path, **overrides):
        values = read_config(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(values).validated()

    def validated(self):
        if not self.is_valid():
            name, messages = next(iter(self.errors.items()))
            field = 'config' if name == '__all__' else name.upper()
            raise ConfigError(f"{field}: {messages[0]}", field=field)
        return self


class ColumnRolesForm(ConfigForm):
    outcome = forms.CharField()
    outcome2 = forms.CharField(required=False)
    x_columns = CommaListField(required=False)
    z_columns = CommaListField(required=False)
    intercept = forms.BooleanField(required=False, initial=True)
    treatment = forms.CharField(required=False)
    propensity = forms.CharField(required=False)
    propensity_x = forms.CharField(required=False)
    missing_indicator = forms.CharField(required=False)
    output_dir = forms.CharField(initial='output')

    def clean(self):
        cleaned_data = super().clean()
        if not cleaned_data.get('intercept') and not cleaned_data.get('x_columns'):
            raise forms.ValidationError('Declare X_COLUMNS or keep the intercept')
        return cleaned_data

    def column_roles(self) -> ColumnRoles:
        data = self.cleaned_data
        return ColumnRoles(
            outcome=data['outcome'],
            x_columns=tuple(data['x_columns']),
            z_columns=tuple(data['z_columns']),
            outcome2=data['outcome2'] or None,
            intercept=data['intercept'],
            treatment=data['treatment'] or None,
            propensity=data['propensity'] or None,
            propensity_x=data['propensity_x'] or None,
            missing_indicator=data['missing_indicator'] or None,
        )

    def require_roles(self, family_id: str, prefix: str):
        data = self.cleaned_data
        if family_id in TREATMENT_FAMILIES and not data.get('treatment'):
            self.add_error('treatment', f'{prefix} family {family_id} needs a TREATMENT column')
        if family_id in TREATMENT_FAMILIES and not (data.get('propensity') or data.get('propensity_x')):
            self.add_error('propensity', f'{prefix} family {family_id} needs a PROPENSITY column')
        if family_id == SURROGATE_STACK and not data.get('outcome2'):
            self.add_error('outcome2', f'{prefix} family {family_id} needs OUTCOME2')

    def z_indices(self, names) -> tuple:
        z_columns = self.cleaned_data['z_columns']
        return tuple(z_columns.index(name) for name in names)


def _transformation(kind: str, indices) -> Transformation:
    return Transformation(kind, tuple(indices))


class FitConfigForm(ColumnRolesForm):
    data = forms.CharField()
    family = forms.ChoiceField(choices=FAMILY_CHOICES, initial='linear')
    use_z = forms.BooleanField(required=False)
    transform = forms.ChoiceField(choices=TRANSFORM_CHOICES, initial='identity')
    transform_indices = IntListField(required=False)

    def clean(self):
        cleaned_data = super().clean()
        family = cleaned_data.get('family')
        if family:
            self.require_roles(family, 'FAMILY')
        if cleaned_data.get('use_z') and not cleaned_data.get('z_columns'):
            self.add_error('use_z', 'USE_Z needs Z_COLUMNS')
        if cleaned_data.get('transform') == 'subset' and not cleaned_data.get('transform_indices'):
            self.add_error('transform_indices', 'A subset transformation needs TRANSFORM_INDICES')
        return cleaned_data

    def build_family(self, data: Dataset) -> EquationFamily:
        z_cols = tuple(range(len(self.cleaned_data['z_columns']))) if self.cleaned_data['use_z'] else ()
        design = FeatureMap.all_x(data, z_cols)
        family_id = self.cleaned_data['family']
        propensity = 'propensity' if self.cleaned_data['propensity'] else 'propensity_x'
        if family_id in TREATMENT_FAMILIES:
            return EquationFamily(family_id, design, design, propensity=propensity)
        return EquationFamily(family_id, design)

    def transformation(self) -> Transformation:
        return _transformation(self.cleaned_data['transform'], self.cleaned_data['transform_indices'])


class FuseConfigForm(ColumnRolesForm):
    internal_data = forms.CharField()
    external_summary = forms.CharField()
    psi_family = forms.ChoiceField(choices=FAMILY_CHOICES, required=False)
    psi_outcome = forms.ChoiceField(choices=OUTCOME_CHOICES, initial='y')
    phi_family = forms.ChoiceField(choices=FAMILY_CHOICES, initial='linear')
    phi_control_z = CommaListField(required=False)
    phi_effect_z = CommaListField(required=False)
    transform = forms.ChoiceField(choices=TRANSFORM_CHOICES, required=False)
    transform_indices = IntListField(required=False)
    loss = forms.ChoiceField(choices=LOSS_CHOICES, initial='identity')
    loss_columns = IntListField(required=False)

    def clean(self):
        cleaned_data = super().clean()
        for key in ('psi_family', 'phi_family'):
            if cleaned_data.get(key):
                self.require_roles(cleaned_data[key], key.upper())
        z_columns = cleaned_data.get('z_columns') or []
        for key in ('phi_control_z', 'phi_effect_z'):
            unknown = [c for c in cleaned_data.get(key) or [] if c not in z_columns]
            if unknown:
                self.add_error(key, f"Not declared in Z_COLUMNS: {', '.join(unknown)}")
        loss = LOSS_ALIASES.get(cleaned_data.get('loss'), cleaned_data.get('loss'))
        if loss == A_PREDICTIVE_SUBSET and not cleaned_data.get('loss_columns'):
            self.add_error('loss_columns', 'The pmse_subset loss needs LOSS_COLUMNS')
        return cleaned_data

    def psi(self, data: Dataset, summary_family: str) -> EquationFamily:
        """ψ on the external-model covariates X only"""
        family_id = self.cleaned_data['psi_family'] or summary_family
        design = FeatureMap.all_x(data)
        if family_id in TREATMENT_FAMILIES:
            propensity = 'propensity_x' if self.cleaned_data['propensity_x'] else 'propensity'
            return EquationFamily(family_id, design, design, outcome=self.cleaned_data['psi_outcome'],
                                  propensity=propensity)
        return EquationFamily(family_id, design, outcome=self.cleaned_data['psi_outcome'])

    def phi(self, data: Dataset) -> EquationFamily:
        """φ on X plus the selected Z columns (all of them when none are listed)"""
        z_columns = self.cleaned_data['z_columns']
        control_z = self.z_indices(self.cleaned_data['phi_control_z'] or z_columns)
        family_id = self.cleaned_data['phi_family']
        control = FeatureMap.all_x(data, control_z)
        if family_id in TREATMENT_FAMILIES:
            effect = FeatureMap.all_x(data, self.z_indices(self.cleaned_data['phi_effect_z'] or z_columns))
            propensity = 'propensity' if self.cleaned_data['propensity'] else 'propensity_x'
            return EquationFamily(family_id, control, effect, propensity=propensity)
        return EquationFamily(family_id, control)

    def transformation(self, declared: Transformation) -> Transformation:
        """The config's transformation, or the summary's declaration when omitted"""
        if not self.cleaned_data['transform']:
            return declared
        return _transformation(self.cleaned_data['transform'], self.cleaned_data['transform_indices'])

    def a_spec(self) -> WeightMatrixSpec:
        return WeightMatrixSpec(self.cleaned_data['loss'], tuple(self.cleaned_data['loss_columns']))


class BootstrapConfigForm(FuseConfigForm):
    replicates = forms.IntegerField(min_value=1, initial=lambda: fusion_setting('BOOTSTRAP_REPLICATES'))
    seed = forms.IntegerField(min_value=0, initial=0)
    ci_level = forms.FloatField(initial=lambda: fusion_setting('CI_LEVEL'))
    workers = forms.IntegerField(min_value=1, required=False)

    def clean_ci_level(self):
        ci_level = self.cleaned_data['ci_level']
        if not 0.0 < ci_level < 1.0:
            raise forms.ValidationError('CI_LEVEL must lie strictly between 0 and 1')
        return ci_level
