"""Decode 3-D hand position from multichannel EEG.

Modules: ``ingest`` (session files), ``preprocess`` (filtering, decimation,
scaling), ``trial_qc`` (bad-trial rejection), ``dataset`` (lag windows and
splits), ``autograd`` (reverse-mode differentiation and Adam), ``model``
(conv/BiLSTM/dense decoder), ``metrics`` and ``train`` (loss, metrics,
training loop), ``erp`` (evoked-response averages), ``synth`` (synthetic
sessions) and ``cli``.
"""

__version__ = "0.1.0"
