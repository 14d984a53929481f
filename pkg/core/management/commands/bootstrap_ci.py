from core.bootstrap import BootstrapConfig, bootstrap_fuse
from core.datafiles import write_rows
from core.forms import BootstrapConfigForm
from core.management.base import FusionCommand, load_fusion_inputs

CI_COLUMNS = ['estimator', 'coordinate', 'point', 'lower', 'upper', 'n_failed']


class Command(FusionCommand):
    help = 'Percentile bootstrap intervals for the internal, conditional and James-Stein estimators'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--replicates', type=int, help='Number of bootstrap replicates B')
        parser.add_argument('--seed', type=int, help='Base seed; replicate k uses seed + k')
        parser.add_argument('--workers', type=int, help='Threads used for replicates')

    def run(self, **options):
        form = BootstrapConfigForm.from_file(
            options['config'],
            replicates=options.get('replicates'),
            seed=options.get('seed'),
            workers=options.get('workers'),
        )
        data, summary, psi, phi, t, a_spec = load_fusion_inputs(form)
        cfg = BootstrapConfig(
            replicates=form.cleaned_data['replicates'],
            base_seed=form.cleaned_data['seed'],
            ci_level=form.cleaned_data['ci_level'],
            workers=form.cleaned_data['workers'],
        )
        output = bootstrap_fuse(data, summary, (psi, phi), t, a_spec, cfg)

        out = self.output_dir(form.cleaned_data['output_dir'])
        write_rows(out / 'bootstrap_ci.csv', output.rows(phi.coordinate_names(data)), CI_COLUMNS)
        self.stdout.write(self.style.SUCCESS(
            f"Wrote bootstrap_ci.csv to {out} ({cfg.replicates} replicates, {output.n_failed} failed)"
        ))
