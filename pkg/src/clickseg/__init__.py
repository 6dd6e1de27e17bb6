"""Click-guided PET/CT lesion segmentation at desk scale: synthetic
phantoms, curriculum training with simulated clicks, tracer-aware hybrid
inference, volumetric lesion metrics, and an interactive session service."""

__version__ = "0.1.0"
