"""This script contains the registry of named model variants: the method x head grid and the
structural modifications of each method
"""

from dataclasses import dataclass
from typing import Dict, List

from tkf_types.enums import BridgeVariant, CombineVariant, FusionMethod, HeadType

@dataclass
class VariantSpec:
    """ The model fields a named variant fixes """
    name: str
    description: str
    fusion_method: FusionMethod
    head_type: HeadType
    combine_variant: CombineVariant = CombineVariant.UPCONV_CONCAT
    bridge_variant: BridgeVariant = BridgeVariant.UPCONV_MULTI
    use_class_token: bool = False
    modified: bool = False

    def model_fields(self) -> dict:
        """ Returns the ModelConfig values this variant sets """
        return {'fusion_method': self.fusion_method,
                'head_type': self.head_type,
                'combine_variant': self.combine_variant,
                'bridge_variant': self.bridge_variant,
                'use_class_token': self.use_class_token,
               }


def _basic_variants() -> List[VariantSpec]:
    """ Returns every fusion method with every head """
    method_labels = {FusionMethod.LATE_PARALLEL: 'Late parallel token fusion',
                     FusionMethod.EARLY_FUSION: 'Early token fusion through bridge blocks',
                     FusionMethod.LAYER_BY_LAYER: 'Layer by layer token fusion'}
    head_labels = {HeadType.TOKEN_WISE: 'token-wise pooling',
                   HeadType.CHANNEL_WISE: 'channel-wise pooling',
                   HeadType.MIXING: 'mixed pooling'}
    return [VariantSpec(name=f'{method.value}_{head.value}',
                        description=f'{method_labels[method]}, {head_labels[head]}',
                        fusion_method=method, head_type=head)
            for method in FusionMethod for head in HeadType]


def _modified_variants() -> List[VariantSpec]:
    """ Returns the structural modifications, each with a channel-wise head """
    late = FusionMethod.LATE_PARALLEL
    early = FusionMethod.EARLY_FUSION
    channel = HeadType.CHANNEL_WISE
    return [
        VariantSpec('late_upconv_add', 'Late fusion, UpConv expansion then addition', late,
                    channel, combine_variant=CombineVariant.UPCONV_ADD, modified=True),
        VariantSpec('late_copy_concat', 'Late fusion, copy expansion then concatenation', late,
                    channel, combine_variant=CombineVariant.COPY_CONCAT, modified=True),
        VariantSpec('late_copy_add', 'Late fusion, copy expansion then addition', late,
                    channel, combine_variant=CombineVariant.COPY_ADD, modified=True),
        VariantSpec('early_copy_multi', 'Early fusion, copy bridges on all stages', early,
                    channel, bridge_variant=BridgeVariant.COPY_MULTI, modified=True),
        VariantSpec('early_upconv_single', 'Early fusion, one UpConv bridge on the last stage',
                    early, channel, bridge_variant=BridgeVariant.UPCONV_SINGLE, modified=True),
        VariantSpec('early_copy_single', 'Early fusion, one copy bridge on the last stage',
                    early, channel, bridge_variant=BridgeVariant.COPY_SINGLE, modified=True),
        VariantSpec('layer_by_layer_class_token',
                    'Layer by layer fusion with a class token kept out of the mixing',
                    FusionMethod.LAYER_BY_LAYER, channel, use_class_token=True, modified=True),
    ]


# All registered variants by name, basic ones first
VARIANTS: Dict[str, VariantSpec] = {one.name: one for one in
                                    _basic_variants() + _modified_variants()}


def basic_variant_names() -> List[str]:
    """ Returns the names of the method x head variants """
    return [name for name, one in VARIANTS.items() if not one.modified]


def modified_variant_names() -> List[str]:
    """ Returns the names of the structural variants """
    return [name for name, one in VARIANTS.items() if one.modified]


def get_variant(name: str) -> VariantSpec:
    """ Looks up a variant by name
    Arguments:
        name: the registered name
    Return:
        Returns the VariantSpec
    Raises:
        KeyError: when the name isn't registered
    """
    if name not in VARIANTS:
        raise KeyError(f'Unknown variant "{name}"; known variants: {", ".join(VARIANTS)}')
    return VARIANTS[name]
