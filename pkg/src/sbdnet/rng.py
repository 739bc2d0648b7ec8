"""Named, independent random streams derived from one integer seed.

Each stream is a Philox generator keyed by ``SeedSequence(seed,
spawn_key=(stream_id,))``, so adding draws to one stream never shifts
another. Coupled runs rely on this to share exactly the arrival and
departure randomness they need.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

STREAMS = ("arrivals-low", "arrivals-topup", "departures", "placement")
_STREAM_ID = {name: i for i, name in enumerate(STREAMS)}


def check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise DomainError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def substream(seed: int, name: str) -> np.random.Generator:
    if name not in _STREAM_ID:
        raise DomainError(f"unknown stream {name!r}; expected one of {STREAMS}")
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(_STREAM_ID[name],))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """The four named generators for one run, accessed as attributes or by name."""

    def __init__(self, seed: int):
        self.seed = check_seed(seed)
        self._gens = {name: substream(self.seed, name) for name in STREAMS}

    def __getitem__(self, name) -> np.random.Generator:
        return self._gens[name]

    @property
    def arrivals(self):
        return self._gens["arrivals-low"]

    @property
    def topup(self):
        return self._gens["arrivals-topup"]

    @property
    def departures(self):
        return self._gens["departures"]

    @property
    def placement(self):
        return self._gens["placement"]
