"""Byte-level tokenizer: 256 byte values plus PAD/BOS/EOS/SEP specials."""

from __future__ import annotations

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
SEP_ID = 259
VOCAB_SIZE = 260
SPECIALS = (PAD_ID, BOS_ID, EOS_ID, SEP_ID)


class ByteTokenizer:
    """Lossless byte-level encoding; specials never collide with bytes."""

    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids) -> str:
        data = bytes(i for i in ids if 0 <= i < 256)
        # Sampled ids may form invalid UTF-8; replacement keeps decode total.
        return data.decode("utf-8", errors="replace")
