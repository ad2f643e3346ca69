"""Grounded abstractive summarization of long transcripts."""

__version__ = "0.1.0"
