"""Named random streams fanned out from one master seed.

Each consumer (data shuffling, init, dropout, generation) draws from its own
stream keyed by name, so toggling one consumer cannot shift the others.
"""

import hashlib

import numpy as np


def _name_key(*names: str) -> int:
    h = hashlib.blake2b("/".join(names).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def stream(master_seed: int, *names: str) -> np.random.Generator:
    """Deterministic Generator for (master_seed, names...)."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([master_seed, _name_key(*names)])))


def derive_seed(master_seed: int, *names: str) -> int:
    """Stable child seed for a named consumer (e.g. one mode x fold job)."""
    return int(np.random.SeedSequence(
        [master_seed, _name_key(*names)]).generate_state(1)[0])


def generator_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
