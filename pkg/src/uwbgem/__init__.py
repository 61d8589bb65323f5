"""Weakly supervised UWB ranging-error mitigation.

Modules: ``signal_model`` (synthetic CIRs), ``dataset`` (records, CSV,
weak-label corruption), ``nn`` (MLP with backprop), ``gem`` (E-Net/M-Net
model and training), ``baseline`` (feature + kernel ridge regressor),
``evaluation`` (metrics, CDFs, sweeps) and ``cli``.
"""

__version__ = "0.1.0"
