from .backbone import BackboneOutput, forward
from .params import GROUPS, PARAMS_VERSION, ModelParams, init_params

__all__ = ["BackboneOutput", "GROUPS", "ModelParams", "PARAMS_VERSION", "forward", "init_params"]
