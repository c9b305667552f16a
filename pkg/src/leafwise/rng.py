"""Reproducible per-path random streams.

Paths are grouped in fixed blocks of ``BLOCK`` consecutive indices; block
``b`` owns a Philox stream keyed by ``SeedSequence([seed, b])`` and always
draws a full block of normals per time step.  The noise a path sees
therefore depends only on ``(seed, path index)``, never on how many paths
run alongside it or how they are scheduled over workers.
"""

from __future__ import annotations

import numpy as np

BLOCK = 256


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def event_generator(seed: int, path: int, step: int, tag: int = 1) -> np.random.Generator:
    """Independent stream for a rare per-path event (e.g. a step refinement)."""
    return np.random.default_rng([int(seed), int(path), int(step), int(tag), 0x5EED])


class PathStreams:
    """Gaussian noise for the paths ``path_ids``.

    ``normals(n_steps)`` returns a complex array of shape ``(n_steps, n_paths)``
    whose real and imaginary parts are independent standard normals.
    """

    def __init__(self, seed: int, path_ids):
        self.seed = int(seed)
        self.path_ids = np.asarray(path_ids, dtype=np.int64)
        blocks = np.unique(self.path_ids // BLOCK)
        self._gens = {int(b): block_generator(seed, b) for b in blocks}
        self._index(blocks)

    def _index(self, blocks):
        self._blocks = blocks
        pos = np.searchsorted(blocks, self.path_ids // BLOCK)
        self._cols = pos * BLOCK + self.path_ids % BLOCK

    def normals(self, n_steps: int) -> np.ndarray:
        draws = [self._gens[int(b)].standard_normal((n_steps, BLOCK, 2)).view(complex)[..., 0]
                 for b in self._blocks]
        full = np.concatenate(draws, axis=1) if len(draws) > 1 else draws[0]
        return full[:, self._cols]

    def drop(self, keep_mask) -> None:
        """Forget paths where ``keep_mask`` is False; blocks with no survivors stop drawing."""
        self.path_ids = self.path_ids[np.asarray(keep_mask, dtype=bool)]
        blocks = np.unique(self.path_ids // BLOCK)
        if blocks.size != self._blocks.size:
            self._gens = {int(b): self._gens[int(b)] for b in blocks}
        self._index(blocks)
