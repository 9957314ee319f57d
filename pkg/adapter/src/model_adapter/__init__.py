"""Oracle server for torch classifiers plus attribution-map export.

Serves the newline-JSON stdio protocol expected by the explanation engine
and exports pixel-attribution guidance maps (saliency, input x gradient,
integrated gradients, guided backpropagation) as NPY files.
"""

__version__ = "0.1.0"

from .models import AdapterConfig, build_model, load_config
from .attribution import export_guidance, integrated_gradients, saliency

__all__ = ["AdapterConfig", "build_model", "load_config",
           "export_guidance", "integrated_gradients", "saliency"]
