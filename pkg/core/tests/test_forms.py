import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings

from core.equations import WCLS_CATE, Dataset
from core.exceptions import ConfigError
from core.forms import BootstrapConfigForm, FitConfigForm, FuseConfigForm, read_config
from core.shrinkage import A_PREDICTIVE, A_PREDICTIVE_SUBSET


class ConfigFormTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, text):
        path = self.dir / 'run.env'
        path.write_text(text)
        return path


class ReadConfigTests(ConfigFormTestCase):
    def test_keys_are_lower_cased(self):
        self.assertEqual(read_config(self.config('OUTCOME=y\nX_COLUMNS=x1,x2\n')),
                         {'outcome': 'y', 'x_columns': 'x1,x2'})

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            read_config(self.dir / 'absent.env')
        self.assertEqual(ctx.exception.field, 'config')


class FitConfigFormTests(ConfigFormTestCase):
    def test_defaults(self):
        form = FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nX_COLUMNS=x1, x2\n'))
        self.assertEqual(form.cleaned_data['family'], 'linear')
        self.assertEqual(form.cleaned_data['x_columns'], ['x1', 'x2'])
        self.assertTrue(form.cleaned_data['intercept'])
        self.assertEqual(form.cleaned_data['output_dir'], 'output')
        self.assertEqual(form.transformation().kind, 'identity')

    def test_missing_outcome(self):
        with self.assertRaises(ConfigError) as ctx:
            FitConfigForm.from_file(self.config('DATA=d.csv\n'))
        self.assertEqual(ctx.exception.field, 'OUTCOME')

    def test_treatment_family_needs_treatment(self):
        with self.assertRaises(ConfigError) as ctx:
            FitConfigForm.from_file(self.config(f'DATA=d.csv\nOUTCOME=y\nFAMILY={WCLS_CATE}\nPROPENSITY=p\n'))
        self.assertEqual(ctx.exception.field, 'TREATMENT')

    def test_unknown_family(self):
        with self.assertRaises(ConfigError) as ctx:
            FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nFAMILY=probit\n'))
        self.assertEqual(ctx.exception.field, 'FAMILY')

    def test_subset_needs_indices(self):
        with self.assertRaises(ConfigError) as ctx:
            FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nTRANSFORM=subset\n'))
        self.assertEqual(ctx.exception.field, 'TRANSFORM_INDICES')

    def test_intercept_only_without_columns_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nINTERCEPT=false\n'))
        self.assertEqual(ctx.exception.field, 'config')

    def test_unknown_keys_are_logged(self):
        with self.assertLogs('core.forms', 'WARNING') as logs:
            FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nCOLOUR=blue\n'))
        self.assertIn('COLOUR', logs.output[0])

    def test_build_family_with_z(self):
        form = FitConfigForm.from_file(self.config('DATA=d.csv\nOUTCOME=y\nX_COLUMNS=x1\nZ_COLUMNS=z1,z2\nUSE_Z=true\n'))
        data = Dataset(y=np.zeros(4), x=np.ones((4, 2)), z=np.ones((4, 2)))
        self.assertEqual(form.build_family(data).param_dim, 4)


class FuseConfigFormTests(ConfigFormTestCase):
    base = 'INTERNAL_DATA=i.csv\nEXTERNAL_SUMMARY=s.env\nOUTCOME=y\nX_COLUMNS=x1\nZ_COLUMNS=z1,z2\n'

    def test_loss_alias(self):
        form = FuseConfigForm.from_file(self.config(self.base + 'LOSS=pmse\n'))
        self.assertEqual(form.a_spec().kind, A_PREDICTIVE)

    def test_subset_loss_needs_columns(self):
        with self.assertRaises(ConfigError) as ctx:
            FuseConfigForm.from_file(self.config(self.base + 'LOSS=pmse_subset\n'))
        self.assertEqual(ctx.exception.field, 'LOSS_COLUMNS')
        form = FuseConfigForm.from_file(self.config(self.base + 'LOSS=pmse_subset\nLOSS_COLUMNS=3,4\n'))
        self.assertEqual(form.a_spec().kind, A_PREDICTIVE_SUBSET)
        self.assertEqual(form.a_spec().subset, (3, 4))

    def test_phi_columns_must_be_declared(self):
        with self.assertRaises(ConfigError) as ctx:
            FuseConfigForm.from_file(self.config(self.base + 'PHI_CONTROL_Z=z9\n'))
        self.assertEqual(ctx.exception.field, 'PHI_CONTROL_Z')

    def test_phi_uses_selected_z(self):
        form = FuseConfigForm.from_file(self.config(self.base + 'PHI_CONTROL_Z=z2\n'))
        data = Dataset(y=np.zeros(4), x=np.ones((4, 2)), z=np.ones((4, 2)))
        self.assertEqual(form.phi(data).feature_map.z_cols, (1,))
        self.assertEqual(form.psi(data, 'linear').param_dim, 2)


class BootstrapConfigFormTests(ConfigFormTestCase):
    base = 'INTERNAL_DATA=i.csv\nEXTERNAL_SUMMARY=s.env\nOUTCOME=y\n'

    @override_settings(FUSION={'BOOTSTRAP_REPLICATES': 50, 'CI_LEVEL': 0.8})
    def test_defaults_come_from_settings(self):
        form = BootstrapConfigForm.from_file(self.config(self.base))
        self.assertEqual(form.cleaned_data['replicates'], 50)
        self.assertEqual(form.cleaned_data['ci_level'], 0.8)

    def test_overrides_win(self):
        form = BootstrapConfigForm.from_file(self.config(self.base + 'REPLICATES=30\n'), replicates=12, seed=None)
        self.assertEqual(form.cleaned_data['replicates'], 12)
        self.assertEqual(form.cleaned_data['seed'], 0)

    def test_ci_level_range(self):
        with self.assertRaises(ConfigError) as ctx:
            BootstrapConfigForm.from_file(self.config(self.base + 'CI_LEVEL=1.5\n'))
        self.assertEqual(ctx.exception.field, 'CI_LEVEL')
