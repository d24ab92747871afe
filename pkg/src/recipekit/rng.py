"""Reproducible random streams keyed by ``(seed, stream id)``."""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(epoch, index):
    """Per-sample stream id for one epoch: high word epoch, low word index."""
    return ((int(epoch) & 0xFFFFFFFF) << 32) | (int(index) & 0xFFFFFFFF)


def text_stream_id(*parts):
    """Stable 64-bit stream id derived from arbitrary string-able parts."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


class RngStream:
    """Uniform, integer and Beta draws from a PCG64 generator.

    Identical ``(seed, stream)`` pairs yield identical draw sequences.  Every
    draw takes an optional ``label`` which :class:`RecordingRngStream` logs;
    the plain stream ignores it.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        ss = np.random.SeedSequence([self.seed, self.stream])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def _note(self, label, value):
        pass

    def random(self, label=None):
        v = float(self._gen.random())
        self._note(label, v)
        return v

    def uniform(self, lo, hi, label=None):
        v = float(self._gen.uniform(lo, hi))
        self._note(label, v)
        return v

    def integers(self, lo, hi, label=None):
        """Integer in ``[lo, hi)``."""
        v = int(self._gen.integers(lo, hi))
        self._note(label, v)
        return v

    def beta(self, a, b, label=None):
        v = float(self._gen.beta(a, b))
        self._note(label, v)
        return v

    def bernoulli(self, p, label=None):
        # always consume a draw so the sequence does not depend on p
        v = float(self._gen.random())
        hit = v < p
        self._note(label, hit)
        return hit

    def normal(self, size, scale=1.0, label=None):
        v = self._gen.normal(0.0, scale, size=size)
        self._note(label, None)
        return v


class RecordingRngStream(RngStream):
    """An :class:`RngStream` that appends ``(label, value)`` for every draw."""

    def __init__(self, seed, stream=0):
        super().__init__(seed, stream)
        self.log = []

    def _note(self, label, value):
        self.log.append((label, value))

    def labels(self):
        return [label for label, _ in self.log]
