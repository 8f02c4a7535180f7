"""Parameter sets of the laboratory link: detector noise, receiver, optimised states."""
from __future__ import annotations

from .channel import ChannelParams
from .detection import DetectorNoise, ProtocolState, ReceiverModel
from .finitekey import SecurityParams

# (Y0, b) per detector
DETECTOR_NOISE = {
    "H": DetectorNoise(7.6e-6, 2.6e-4),
    "V": DetectorNoise(3.1e-5, 1.8e-4),
    "D": DetectorNoise(6.7e-5, 2.7e-4),
    "A": DetectorNoise(6.7e-5, 1.8e-4),
}

ETA_BOB = 0.42
ETA_D = 0.1
E_MIS = 0.003
F_EC = 1.16
N_PULSES = 3e10
EPS_SEC = 1e-10
EPS_COR = 1e-15
MU3 = 0.002
SIGMA = 0.9

RECEIVER = ReceiverModel(DETECTOR_NOISE, ETA_BOB, ETA_D, E_MIS)
SECURITY = SecurityParams(EPS_SEC, EPS_COR, F_EC, N_PULSES)

# mean loss (dB) -> (q_x, P_mu1, P_mu2, mu1, mu2), all at sigma = 0.9
OPTIMIZED_STATES_FREE = {
    11: (0.904, 0.660, 0.215, 0.56, 0.225),
    13: (0.879, 0.617, 0.244, 0.56, 0.23),
    15: (0.844, 0.552, 0.287, 0.56, 0.23),
    17: (0.789, 0.460, 0.352, 0.54, 0.24),
    19: (0.683, 0.319, 0.439, 0.54, 0.245),
}

OPTIMIZED_STATES = {
    loss: ProtocolState.from_free(*free, mu3=MU3)
    for loss, free in OPTIMIZED_STATES_FREE.items()
}


def channel(loss_db: float, sigma: float = SIGMA) -> ChannelParams:
    return ChannelParams.from_loss_db(loss_db, sigma)
