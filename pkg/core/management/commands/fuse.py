from core.datafiles import write_rows
from core.forms import FuseConfigForm
from core.management.base import FusionCommand, load_fusion_inputs
from core.pipeline import fuse

FUSION_COLUMNS = ['coordinate', 'internal', 'conditional', 'js', 'weight', 'tau_star', 'd_ratio']


class Command(FusionCommand):
    help = 'Combine internal data with an external summary into conditional and James-Stein estimates'

    def run(self, **options):
        form = FuseConfigForm.from_file(options['config'])
        data, summary, psi, phi, t, a_spec = load_fusion_inputs(form)
        result = fuse(data, summary, psi, phi, t, a_spec)

        out = self.output_dir(form.cleaned_data['output_dir'])
        write_rows(out / 'fusion.csv', result.rows(phi.coordinate_names(data)), FUSION_COLUMNS)
        self.stdout.write(self.style.SUCCESS(
            f"Wrote fusion.csv to {out} (weight {result.weight:.4f}, fallback {result.shrinkage.fallback})"
        ))
