"""This script contains the enumerations used by model and run configurations
"""

from enum import Enum

class FusionMethod(str, Enum):
    """ How the CNN and transformer streams are fused """
    LATE_PARALLEL = 'late_parallel'
    EARLY_FUSION = 'early_fusion'
    LAYER_BY_LAYER = 'layer_by_layer'

class CombineVariant(str, Enum):
    """ Late fusion: how the transformer grid is expanded and joined with the CNN tokens """
    UPCONV_CONCAT = 'upconv_concat'
    UPCONV_ADD = 'upconv_add'
    COPY_CONCAT = 'copy_concat'
    COPY_ADD = 'copy_add'

    @property
    def uses_upconv(self) -> bool:
        """ Returns whether a learned transposed convolution does the expansion """
        return self in (CombineVariant.UPCONV_CONCAT, CombineVariant.UPCONV_ADD)

    @property
    def concatenates(self) -> bool:
        """ Returns whether the two streams are joined along channels """
        return self in (CombineVariant.UPCONV_CONCAT, CombineVariant.COPY_CONCAT)

class BridgeVariant(str, Enum):
    """ Early fusion: which stages are bridged and how they are upsampled """
    UPCONV_MULTI = 'upconv_multi'
    COPY_MULTI = 'copy_multi'
    UPCONV_SINGLE = 'upconv_single'
    COPY_SINGLE = 'copy_single'

    @property
    def uses_upconv(self) -> bool:
        """ Returns whether learned transposed convolutions do the upsampling """
        return self in (BridgeVariant.UPCONV_MULTI, BridgeVariant.UPCONV_SINGLE)

    @property
    def multi(self) -> bool:
        """ Returns whether all five stages are bridged """
        return self in (BridgeVariant.UPCONV_MULTI, BridgeVariant.COPY_MULTI)

class HeadType(str, Enum):
    """ Pooling performed by the classification head """
    TOKEN_WISE = 'token_wise'
    CHANNEL_WISE = 'channel_wise'
    MIXING = 'mixing'

class OptimAlgorithm(str, Enum):
    """ Parameter update rule """
    SGD_MOMENTUM = 'sgd_momentum'
    ADAM = 'adam'

class DatasetSource(str, Enum):
    """ Where samples come from """
    SYNTHETIC = 'synthetic'
    CIFAR10 = 'cifar10'
