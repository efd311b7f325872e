from .diffusion import ScheduleConfig
from .network import NetworkConfig
from .sampling import GuidanceSpec
from .training import ChannelWeights, TrainConfig

__all__ = [
    "ChannelWeights",
    "GuidanceSpec",
    "NetworkConfig",
    "ScheduleConfig",
    "TrainConfig",
]
