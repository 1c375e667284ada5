"""plotgen: renders tierbench CSV result bundles into figures."""

__version__ = "0.1.0"

from .render import FAMILIES, PlotSpec, render  # noqa: F401
from .schema import EmptyData, SchemaMismatch  # noqa: F401
