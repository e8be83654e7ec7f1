"""Multi-view EEG empathy-level classification on a small numpy autodiff core.

Modules: ``eeg_io`` (recordings), ``preprocess`` (filter, resample, CAR,
windows), ``augment`` (STFT-magnitude noise), ``diffcore`` (reverse-mode
autodiff), ``encoder`` (patch transformer), ``fusion`` (shared/specific
decomposition), ``contrast`` (InfoNCE), ``trainer`` (splits, training,
reports, ablation), ``synthgen`` (synthetic cohorts) and ``cli``.
"""

__version__ = "0.1.0"
