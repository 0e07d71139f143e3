"""Composition of enhancer, codec and channel in either order."""

from __future__ import annotations

from ..autodiff.tensor import Tensor, as_tensor
from ..channel import ChannelConfig, awgn_transmit
from ..errors import ConfigurationError
from .convtasnet import Enhancer
from .layers import Module
from .transnet import TransNet

ORDERS = ("enhance-transmit", "transmit-enhance")
ORDER_ALIASES = {
    "enhance-transmit": "enhance-transmit",
    "enh->trans": "enhance-transmit",
    "enh-trans": "enhance-transmit",
    "transmit-enhance": "transmit-enhance",
    "trans->enh": "transmit-enhance",
    "trans-enh": "transmit-enhance",
}


def canonical_order(order: str) -> str:
    try:
        return ORDER_ALIASES[order]
    except KeyError:
        raise ConfigurationError(f"unknown order {order!r}; use one of {ORDERS}") from None


class System(Module):
    """Noisy speech in, reconstructed speech out.

    Either part may be absent: no transnet means enhancement only, no
    enhancer means transmission only, neither means passthrough.
    """

    kind = "system"

    def __init__(self, enhancer: Enhancer | None = None, transnet: TransNet | None = None,
                 order: str = "enhance-transmit"):
        self.order = canonical_order(order)
        if enhancer is not None and transnet is not None and enhancer.cfg.window != transnet.cfg.frame_len:
            raise ConfigurationError(
                f"frame mismatch: enhancer window {enhancer.cfg.window} samples vs "
                f"transnet frame {transnet.cfg.frame_len} samples")
        self.enhancer = enhancer
        self.transnet = transnet
        self.bind_paths()

    @property
    def frame_len(self) -> int:
        if self.transnet is not None:
            return self.transnet.cfg.frame_len
        if self.enhancer is not None:
            return self.enhancer.cfg.window
        return 1

    def transmit(self, x, channel: ChannelConfig | None, call_index: int = 0, rngs=None, state=None) -> Tensor:
        if self.transnet is None:
            return as_tensor(x)
        z = self.transnet.encode(x, state)
        if channel is not None:
            z = awgn_transmit(z, channel, call_index, self.transnet.cfg.latent_steps, rngs)
        return self.transnet.decode(z, state)

    def enhance(self, y, state=None) -> Tensor:
        if self.enhancer is None:
            return as_tensor(y)
        return self.enhancer.forward(y, state)

    def forward(self, y, channel: ChannelConfig | None = None, call_index: int = 0, rngs=None,
                state=None) -> Tensor:
        if self.order == "enhance-transmit":
            return self.transmit(self.enhance(y, state), channel, call_index, rngs, state)
        return self.enhance(self.transmit(y, channel, call_index, rngs, state), state)
