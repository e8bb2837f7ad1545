from .layers import (bilinear_up2, conv2d_backward, conv2d_forward, convlstm_backward, convlstm_forward,
                     gated_conv_backward, gated_conv_forward, maxpool2_forward, pixel_shuffle,
                     pixel_unshuffle, rcab_backward, rcab_forward)
from .network import (FrameInputs, Model, NetworkConfig, RecurrentState, assemble_network, backward,
                      describe, forward, load_checkpoint, save_checkpoint)
from .optim import Adam, adam_step, halving_lr

__all__ = ["bilinear_up2", "conv2d_backward", "conv2d_forward", "convlstm_backward", "convlstm_forward",
           "gated_conv_backward", "gated_conv_forward", "maxpool2_forward", "pixel_shuffle",
           "pixel_unshuffle", "rcab_backward", "rcab_forward", "FrameInputs", "Model", "NetworkConfig",
           "RecurrentState", "assemble_network", "backward", "describe", "forward", "load_checkpoint",
           "save_checkpoint", "Adam", "adam_step", "halving_lr"]
