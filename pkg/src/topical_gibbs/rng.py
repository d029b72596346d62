"""Reproducible random-number streams.

Every draw in the package flows through an RngStream keyed by a 64-bit seed
and an integer stream id.  Identical (seed, stream) pairs reproduce identical
draw sequences; distinct stream ids give statistically independent streams.
A single stream must not be shared across concurrent callers; derive
substreams instead.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RngStream:
    seed: int
    stream: int = 0
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=(int(self.stream),))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, index):
        """Derive an independent child stream, deterministic in (self, index)."""
        child = object.__new__(RngStream)
        child.seed = self.seed
        child.stream = (self.stream, index)
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=_flatten_key(self.stream) + (int(index),))
        child.gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def state(self):
        return self.gen.bit_generator.state

    def set_state(self, state):
        self.gen.bit_generator.state = state


def _flatten_key(stream):
    if isinstance(stream, tuple):
        out = ()
        for part in stream:
            out += _flatten_key(part)
        return out
    return (int(stream),)
