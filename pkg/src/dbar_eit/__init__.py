"""Direct D-bar reconstruction of complex admittivities from simulated EIT data."""

__version__ = "0.1.0"
