"""Multimodal fusion with frequency-domain compression, a cross-modal
attention bottleneck, and energy-based reconstruction of missing modalities."""

__version__ = "0.1.0"
