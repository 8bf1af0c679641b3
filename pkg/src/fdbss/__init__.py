"""Frequency-domain blind source separation of convolutive audio mixtures.

The chain is STFT, per-bin whitening and complex ICA (RobustICA or
FastICA), projection back to the microphones, optional MuSIC-based DOA
initialization, likelihood-ratio-jump permutation alignment and ISTFT.
"""

from .exceptions import BssError, ConfigError, DataError, DegenerateBinError, WavFormatError
from .signal_core import Spectrogram, StftConfig, TimeSignal, istft, stft
from .ica import IcaConfig, UnmixingSet, separate_bins
from .scale_fix import SourceImageSet, map_to_microphone_domain
from .permutation import PermutationState, sort_permutations
from .beamforming import ArrayGeometry, partition_doa
from .evaluation import SeparationScores, amari_index, bss_eval
from .synth import RoomMixSpec, generate_rirs, mix
from .pipeline import RunConfig, SeparationReport, emit_report, run_separation

__version__ = "0.1.0"
