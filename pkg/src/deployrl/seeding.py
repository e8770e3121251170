"""Per-stage seed derivation.

Every random stream is derived from one master seed: ``SeedSequence`` is fed
``[master_seed, crc32(stage_name), repetition]``. CRC32 is stable across
processes and Python versions, unlike ``hash()``.
"""

import zlib

import numpy as np


def stage_seed(master_seed: int, stage: str, rep: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), zlib.crc32(stage.encode()), int(rep)])


def stage_rng(master_seed: int, stage: str, rep: int = 0) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master_seed, stage, rep))


def stage_int(master_seed: int, stage: str, rep: int = 0) -> int:
    """A derived 32-bit integer seed, for estimators that take ``random_state``."""
    return int(stage_seed(master_seed, stage, rep).generate_state(1)[0])
