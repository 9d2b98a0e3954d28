"""Windowed space-time attention over 4D brain volumes.

Library layout:

- ``tensor``     float64 tensors + reverse-mode autodiff
- ``nifti``      NIfTI-1 single-file reader/writer
- ``volumes``    volume standardization and synthetic labeled datasets
- ``augment``    stochastic 4D augmentations and the two-view pair sampler
- ``patching``   patch embedding, merging, window partition / cyclic shift
- ``attention``  windowed spatial + per-position temporal attention blocks
- ``encoder``    full encoder / projector / classifier assembly
- ``checkpoint`` manifest+blob weight container
- ``train``      contrastive loss, AdamW, schedules, pretrain/finetune loops
- ``costmodel``  analytic attention memory/FLOP model + forward-pass probe
- ``cli``        command-line front end
"""

from voxswin.tensor import Parameter, Tensor, no_grad

__all__ = ["Tensor", "Parameter", "no_grad"]
__version__ = "0.1.0"
