"""Neural utterance classifiers for dementia speech and tools to interpret them."""

__version__ = "0.1.0"
