"""Single-stage GRPO with verifiable rewards on a desk-scale toy policy."""

__version__ = "0.1.0"
