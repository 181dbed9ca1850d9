"""Multi-source sound localization with cross-correlation features and
likelihood-coded neural networks."""

__version__ = '0.1.0'
