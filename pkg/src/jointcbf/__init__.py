"""Joint denoising, dereverberation and source separation with convolutional beamformers."""

from .optimizer import RunConfig, Trace, enhance
from .sim import Scene, generate, oracle_masks, sdr
from .stft import Spectrogram, analyze, synthesize

__version__ = "0.1.0"
