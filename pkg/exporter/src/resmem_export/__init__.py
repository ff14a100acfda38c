"""Bridge from trained torch models to the RMEM v1 dataset format."""

from resmem_export.export import ExportSpec, LayerNotFound, ShapeDrift, export

__version__ = "0.1.0"

__all__ = ["ExportSpec", "LayerNotFound", "ShapeDrift", "export", "__version__"]
