from .backbone import DualBackbone, EncoderBlock, LwcnnBlock, TransformerBranch
from .decoder import (
    MaskDecoder,
    MaskTriplet,
    NUM_MASKS,
    binarize_mask,
    choose_mask_index,
)
from .network import BoxPromptedSegmenter, build_model, sample_to_tensors
from .prompt_encoder import BoxPromptEncoder, boxes_to_tensor

__all__ = [
    "BoxPromptEncoder",
    "BoxPromptedSegmenter",
    "DualBackbone",
    "EncoderBlock",
    "LwcnnBlock",
    "MaskDecoder",
    "MaskTriplet",
    "NUM_MASKS",
    "TransformerBranch",
    "binarize_mask",
    "boxes_to_tensor",
    "build_model",
    "choose_mask_index",
    "sample_to_tensors",
]
