"""Bit packing of sign codes into little-endian uint64 words."""
import numpy as np

WORD_BITS = 64


def num_words(d: int) -> int:
    return (d + WORD_BITS - 1) // WORD_BITS


def pack_codes(values: np.ndarray) -> np.ndarray:
    """Pack the signs of `values` along the last axis.

    Bit j of word w holds dimension 64*w + j; the bit is 1 when the value is
    >= 0 (the +1 code). Trailing bits of the last word are zero.

    Args:
        values: Array of shape (..., d), float or {-1,+1}/bool codes.

    Returns:
        uint64 array of shape (..., ceil(d/64)).
    """
    values = np.asarray(values)
    if values.dtype == np.bool_:
        bits = values
    else:
        bits = values >= 0
    d = bits.shape[-1]
    w = num_words(d)
    pad = w * WORD_BITS - d
    if pad:
        bits = np.concatenate(
            [bits, np.zeros(bits.shape[:-1] + (pad,), dtype=np.bool_)], axis=-1
        )
    packed = np.packbits(bits, axis=-1, bitorder="little")
    packed = np.ascontiguousarray(packed)
    return packed.view("<u8").astype(np.uint64).reshape(bits.shape[:-1] + (w,))


def unpack_codes(words: np.ndarray, d: int) -> np.ndarray:
    """Inverse of `pack_codes`: boolean array of shape (..., d), True for +1."""
    words = np.ascontiguousarray(np.asarray(words, dtype=np.uint64).astype("<u8"))
    as_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (words.shape[-1] * 8,))
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :d].astype(np.bool_)


def tail_mask(d: int) -> np.ndarray:
    """Per-word masks that keep only the first d bits."""
    w = num_words(d)
    masks = np.full(w, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = d % WORD_BITS
    if rem:
        masks[-1] = np.uint64((1 << rem) - 1)
    return masks
