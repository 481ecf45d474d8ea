"""Pipeline orchestration: planning, training, evaluation, experiments, reports."""
