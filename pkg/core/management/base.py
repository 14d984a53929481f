import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.datafiles import load_dataset, read_summary
from core.exceptions import FusionError, SchemaError

logger = logging.getLogger(__name__)


class FusionCommand(BaseCommand):
    """Runs ``run`` and reports any estimation error as a CommandError naming its class"""

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Path to a KEY=value run config')

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except FusionError as e:
            logger.error(f"{type(e).__name__}: {e}", exc_info=True)
            raise CommandError(f"{type(e).__name__}: {e}")

    def run(self, **options):
        raise NotImplementedError

    @staticmethod
    def output_dir(path) -> Path:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        return out


def load_fusion_inputs(form):
    """
    Internal data, external summary, families, transformation and loss of a fuse-style config

    Raises:
        SchemaError: If the summary does not line up with the internal ψ design
    """
    summary = read_summary(form.cleaned_data['external_summary'])
    data = load_dataset(form.cleaned_data['internal_data'], form.column_roles())
    psi = form.psi(data, summary.family_id)
    phi = form.phi(data)
    if psi.param_dim != summary.p:
        raise SchemaError(
            f"External summary has {summary.p} parameters but the internal ψ design has {psi.param_dim}",
            column='THETA',
        )
    if summary.x_columns and tuple(summary.x_columns) != tuple(psi.feature_map.names(data)):
        raise SchemaError(
            f"External X columns {list(summary.x_columns)} differ from internal {psi.feature_map.names(data)}",
            column='X_COLUMNS',
        )
    t = form.transformation(summary.transformation)
    return data, summary, psi, phi, t, form.a_spec()
