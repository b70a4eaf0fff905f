"""Private federated aggregation with verifiable backdoor checks."""

__version__ = "0.1.0"
