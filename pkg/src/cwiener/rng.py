"""Counter-based random streams.

Every random number used by the package is addressed by a key
``(seed, path, step, channel, component)`` and computed from numpy's Philox
4x64-10 bit generator, which is a keyed counter-based generator: the 128-bit
Philox key holds ``(seed, stream)`` and the 256-bit counter selects the path.

Layout
------
- ``key[0:64]``   = seed (taken modulo 2**64)
- ``key[64:128]`` = stream id = ``step << 20 | channel << 1 | component``
- output word ``p`` of the stream belongs to path ``p`` (Philox emits four
  64-bit words per counter increment, so path ``p`` lives in counter block
  ``p // 4`` at word ``p % 4``).

Uniforms use the top 53 bits, ``u = (w >> 11 + 0.5) / 2**53`` in (0, 1),
and normals are ``ndtri(u)`` (inverse normal CDF), so every value depends only
on its key and never on how many values were drawn before it. Chunking the
path axis across threads therefore cannot change any number.
"""

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1
CHANNEL_BITS = 19
STEP_SHIFT = CHANNEL_BITS + 1
MAX_CHANNEL = (1 << CHANNEL_BITS) - 1

# Streams reserved for non-step draws (initial positions, rejection sampling).
AUX_STEP_BASE = 1 << 42


def stream_id(step, channel=0, component=0):
    """Pack ``(step, channel, component)`` into a 64-bit stream identifier."""
    if step < 0 or channel < 0 or component not in (0, 1):
        raise ValueError("stream coordinates must be nonnegative, component 0 or 1")
    if channel > MAX_CHANNEL:
        raise ValueError(f"channel index {channel} exceeds {MAX_CHANNEL}")
    sid = (int(step) << STEP_SHIFT) | (int(channel) << 1) | int(component)
    if sid > MASK64:
        raise ValueError("step index too large for the stream layout")
    return sid


def raw_words(seed, stream, start, count):
    """Return ``count`` raw 64-bit words for paths ``start .. start+count-1``."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be nonnegative")
    key = (int(seed) & MASK64) | (int(stream) << 64)
    bitgen = np.random.Philox(key=key, counter=start // 4)
    skip = start % 4
    return bitgen.random_raw(count + skip)[skip:]


def uniforms(seed, stream, start, count):
    """Uniform variates in the open interval (0, 1)."""
    words = raw_words(seed, stream, start, count)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed, stream, start, count):
    """Standard normal variates by inversion of the uniform stream."""
    return ndtri(uniforms(seed, stream, start, count))
