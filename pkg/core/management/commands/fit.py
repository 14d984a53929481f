import logging

from core.datafiles import load_dataset, write_rows, write_summary
from core.forms import FitConfigForm
from core.fusion import summarize
from core.management.base import FusionCommand
from core.pipeline import fit_model
from core.transform import apply

logger = logging.getLogger(__name__)


class Command(FusionCommand):
    help = 'Fit one estimating equation and write its parameters, sandwich covariance and summary file'

    def run(self, **options):
        form = FitConfigForm.from_file(options['config'])
        data = load_dataset(form.cleaned_data['data'], form.column_roles())
        fam = form.build_family(data)
        t = form.transformation()

        fitted = fit_model(fam, data)
        # validates the declared transformation against the fitted θ
        apply(t, fitted.params)

        out = self.output_dir(form.cleaned_data['output_dir'])
        names = fam.coordinate_names(data)
        se = fitted.standard_errors
        write_rows(
            out / 'params.csv',
            [{'coordinate': name, 'estimate': fitted.params[j], 'std_error': se[j]} for j, name in enumerate(names)],
            ['coordinate', 'estimate', 'std_error'],
        )
        cov_rows = [
            {'coordinate': name, **{other: fitted.sigma_estimate[i, j] for j, other in enumerate(names)}}
            for i, name in enumerate(names)
        ]
        write_rows(out / 'covariance.csv', cov_rows, ['coordinate', *names])
        x_columns = fam.feature_map.names(data) if not fam.uses_z else ()
        write_summary(out / 'summary.env', summarize(fitted, t, x_columns=x_columns))

        logger.info(f"Fit {fam.family_id} with {fam.param_dim} parameters on {data.n} rows")
        self.stdout.write(self.style.SUCCESS(f"Wrote params.csv, covariance.csv and summary.env to {out}"))
