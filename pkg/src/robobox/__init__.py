"""Robot-independent black-box recorder, component monitoring and
rule-based fault diagnosis with a remote monitoring API."""

__version__ = "0.1.0"
