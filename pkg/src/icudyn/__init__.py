"""Dynamic in-ICU mortality risk from irregular clinical time series.

Modules: ``catalog`` (variable aggregation), ``preprocess`` (normalization,
imputation, snapshots, patient split), ``model`` (stacked LSTM with exact
BPTT), ``baselines`` (logistic regression, MLP), ``evaluation`` (ROC/AUC,
bootstrap, observation sweeps), ``synth`` (synthetic cohort with a known
risk oracle) and ``cli``.
"""

__version__ = "0.1.0"
