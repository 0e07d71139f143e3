from .checkpoint import load_checkpoint, save_checkpoint
from .convtasnet import Enhancer, EnhancerConfig
from .layers import Module
from .system import ORDERS, System, canonical_order
from .transnet import LATENCIES_MS, RATIOS, TransNet, TransNetConfig, frame_len_for

__all__ = [
    "Enhancer",
    "EnhancerConfig",
    "LATENCIES_MS",
    "Module",
    "ORDERS",
    "RATIOS",
    "System",
    "TransNet",
    "TransNetConfig",
    "canonical_order",
    "frame_len_for",
    "load_checkpoint",
    "save_checkpoint",
]
