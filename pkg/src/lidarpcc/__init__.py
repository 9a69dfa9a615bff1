"""LiDAR point-cloud geometry codec with per-laser predictive trees."""
from ._accel import backend_name
from .codec import decode_bytes, encode_points
from .container import Bitstream
from .errors import (
    ConfigurationError,
    CorruptionError,
    FormatError,
    InfeasibleError,
    InvalidInputError,
    LpcError,
    PredictorError,
    TruncationError,
)
from .geometry import LaserCalibration, cartesian_to_spherical, spherical_to_cartesian
from .highrate import QpVector
from .lowrate import RdConfig
from .predictor import DeltaPredictor, LstmPredictor, LstmWeights, load_weights, save_weights
from .qpselect import default_qp

__version__ = "0.1.0"
