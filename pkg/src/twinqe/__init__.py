"""Twin-beam photodetection simulator and absolute quantum-efficiency estimators."""

__version__ = "0.1.0"
