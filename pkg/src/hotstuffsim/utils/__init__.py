from .Constants import Defaults, Env, Phase
from .EnvConfig import EnvConfig
from .Logger import configure_logging, log

__all__ = ["Defaults", "Env", "EnvConfig", "Phase", "configure_logging", "log"]
