"""Vehicle-infrastructure cooperative BEV detection with learned feature selection and entropy coding."""

__version__ = "0.1.0"
