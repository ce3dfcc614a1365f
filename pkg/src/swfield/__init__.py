"""Solar wind source classification from coronal image embeddings and heliographic coordinates."""
from swfield.plasma import LabelConfig, WindClass

__version__ = "0.1.0"

__all__ = ["LabelConfig", "WindClass", "__version__"]
