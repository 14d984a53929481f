from core.management.base import FusionCommand
from simulation.forms import SimulateConfigForm
from simulation.reports import write_report
from simulation.scenarios import run_scenario


class Command(FusionCommand):
    help = 'Monte Carlo comparison of the internal, conditional and James-Stein estimators'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--out', help='Output directory (overrides OUTPUT_DIR)')
        parser.add_argument('--plots', action='store_true', default=None, help='Also write an SVG figure')

    def run(self, **options):
        form = SimulateConfigForm.from_file(
            options['config'],
            output_dir=options.get('out'),
            plots=options.get('plots'),
        )
        spec = form.scenario_spec()
        report = run_scenario(spec)

        out = self.output_dir(form.cleaned_data['output_dir'])
        written = write_report(report, out, plots=form.cleaned_data['plots'])
        n_failed = int(report.summary.drop_duplicates(['scenario', 'offset'])['n_failed'].sum())
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {', '.join(p.name for p in written)} to {out} ({n_failed} failed replicates)"
        ))
