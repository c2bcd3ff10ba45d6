"""
polypnet: coupled attention-gated UNets with a split-attention encoder for
polyp segmentation, on a numpy reverse-mode tensor core.
"""

__version__ = "0.1.0"
