"""Training, evaluation, persistence and reporting around the core operators."""
