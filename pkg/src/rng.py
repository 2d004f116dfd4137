"""Counter-based random streams keyed by (seed, step, site)."""

from enum import IntEnum

import numpy as np


class Site(IntEnum):
    """Places in the program that draw random numbers."""
    INIT = 0
    PRIOR_STYLE_1 = 1
    PRIOR_STYLE_2 = 2
    TRANSLATE = 3
    DIAGNOSTICS = 4


def stream(seed: int, step: int, site: int) -> np.random.Generator:
    """Independent generator for one (seed, step, site) key.

    The generator depends on nothing but its key, so the state a resumed run needs
    is only the seed and the step counter.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, int(site)])))
