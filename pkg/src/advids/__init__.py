"""Adversarial-robust intrusion detection: IDS models, evasion attacks, detector banks and fusion."""

__version__ = "0.1.0"
