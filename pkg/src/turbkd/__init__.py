"""Decoy-state BB84 over turbulent free-space channels with transmittance post-selection."""
from .channel import (ChannelParams, TurbulencePath, pdtc_density, sample_transmittance,
                      sigma_from_path, survival_fraction, truncated_mean)
from .detection import (DetectorNoise, ProtocolState, ReceiverModel, SiftedCounts,
                        expected_counts)
from .finitekey import KeyLengthBreakdown, SecurityParams, key_length
from .asymptotic import critical_transmittance, gllp_rate, rate_wise_bound
from .selection import (SelectionOutcome, ThresholdScanResult, arts_scan,
                        finite_selected_rate, prts_rate)
from .optimizer import OptimizationProblem, optimize_state
from .montecarlo import SessionLog, empirical_key_rate, postselect, simulate_session
from .probe import calibrate, frame_sum, gaussian_fit, invert, synth_probe

__version__ = "0.1.0"
