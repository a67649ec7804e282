"""Multi-view knee MRI abnormality classification with late logistic fusion."""
__version__ = "0.1.0"
