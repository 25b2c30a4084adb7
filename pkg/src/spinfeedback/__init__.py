"""Closed-loop calibration of a two-spin-qubit device, simulated end to end.

Modules: ``noise`` (fluctuators, ensembles, drift), ``plant`` (two-qubit
state-vector model and readout), ``feedback`` (protocols and the session
loop), ``analysis`` (Haar CWT, wavelet spectrum, Welch PSD) and ``cli``.
"""

__version__ = "0.1.0"
