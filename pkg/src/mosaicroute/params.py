from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class NetworkParams:
    """Weights of the recurrent spiking network.

    ``w_in[channel, neuron]``, ``w_rec[pre, post]``, ``w_out[neuron, class]``.
    Only ``w_rec`` lives on the fabric and is subject to rewiring.
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray | None = None

    @property
    def n_neurons(self) -> int:
        return self.w_rec.shape[0]

    def copy(self) -> "NetworkParams":
        return replace(
            self,
            w_in=self.w_in.copy(),
            w_rec=self.w_rec.copy(),
            w_out=self.w_out.copy(),
            b_out=None if self.b_out is None else self.b_out.copy(),
        )

    def arrays(self) -> dict:
        out = {"w_in": self.w_in, "w_rec": self.w_rec, "w_out": self.w_out}
        if self.b_out is not None:
            out["b_out"] = self.b_out
        return out
