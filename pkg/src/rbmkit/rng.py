"""Counter-based random streams.

Every path owns independent Philox streams keyed by (seed, path index,
stream id). Draws along a stream are consumed in step order, so how paths
are grouped into blocks or spread over workers never changes a number.
"""
from __future__ import annotations

import numpy as np

NORMAL = 0
UNIFORM = 1
SAMPLE = 2
EXTRA = 3

_MASK64 = (1 << 64) - 1


def stream(seed, index, sid):
    if index < 0 or index >= 1 << 56:
        raise ValueError("stream index out of range")
    key = np.array([seed & _MASK64, (index << 8) | sid], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class BlockStreams:
    """Streams for paths start..start+count-1, drawn chunk by chunk."""

    def __init__(self, seed, start, count, sid):
        self.gens = [stream(seed, start + i, sid) for i in range(count)]

    def normal(self, steps, k):
        out = np.empty((steps, len(self.gens), k))
        for i, g in enumerate(self.gens):
            out[:, i, :] = g.standard_normal((steps, k))
        return out

    def uniform(self, steps, k):
        out = np.empty((steps, len(self.gens), k))
        for i, g in enumerate(self.gens):
            # (0, 1]: log U must stay finite
            out[:, i, :] = 1.0 - g.random((steps, k))
        return out


def run_blocks(fn, n_items, block, workers, payload):
    """Apply fn(payload, start, count) over fixed blocks; results in block order."""
    starts = list(range(0, n_items, block))
    jobs = [(payload, s, min(block, n_items - s)) for s in starts]
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    import pickle
    from concurrent.futures import ProcessPoolExecutor

    try:
        pickle.dumps(payload)
    except Exception:
        import logging
        logging.getLogger(__name__).warning("payload not picklable; running serially")
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*jobs)))
