"""Note-grounded clinical history taking: curation, self-play rollouts,
reward scoring, training-data exports, and judge-based evaluation."""

__version__ = "0.1.0"
