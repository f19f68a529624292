"""Plane-wave ultrasound beamforming with unsupervised coherence-trained networks."""
from .core import (COMPOUND, DegenerateNormError, FormatError, IqImage, PixelGrid,
                   ProbeGeometry, PwSet, RfFrame, check, make_pixel_grid, validate)
from .beamform import (BeamformConfig, BmodeImage, compound, das_beamform, dmas_beamform,
                       iq_demodulate, to_bmode)
from .net import NetworkConfig, Parameters, init_parameters
from .dcltrain import TrainConfig, coherence_loss, mse_loss, train
from .simfield import Phantom, Pulse, build_cyst_phantom, build_point_phantom, simulate_rf

__version__ = "0.1.0"
