"""Finite-key BB84 key-rate modelling and emitter characterisation for
room-temperature single-photon sources."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    EstimationError,
    NoDetectionError,
    SpsqkdError,
)
from .finitekey import (  # noqa: F401
    KeyRateResult,
    ProtocolParams,
    binary_entropy,
    evaluate_key_rate,
    finite_size_delta,
    key_rate,
    multiphoton_correction,
    qber_upper_bound,
    secret_fraction,
    split_epsilon,
)
from .link_model import (  # noqa: F401
    ChannelModel,
    SourceModel,
    coupling_efficiency,
    detection_probability,
    keyrate_curve,
    multiphoton_probability_after_channel,
    sil_enhancement,
    transmittance,
)
