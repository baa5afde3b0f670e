"""Dataset distillation in neural fields, with frequency-domain and resolution baselines."""

__version__ = "0.1.0"
