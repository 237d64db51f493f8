"""Treatment-outcome risk ranking: data handling, categorical encoders,
native learners, ranking metrics, attribution and cohort fairness tools."""

__version__ = "0.1.0"
