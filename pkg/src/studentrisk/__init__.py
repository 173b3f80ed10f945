"""Academic-success prediction from questionnaire data."""
__version__ = "0.1.0"
