"""Multimodal protein-function prediction: reconstructive pretraining,
bidirectional selective scans, cross-modal attention, dynamic expert
selection, and a multi-label evaluation suite."""

__version__ = "0.1.0"
