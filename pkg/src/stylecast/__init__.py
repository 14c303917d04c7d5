"""Cross-lingual multiscale speaking-style transfer on synthetic parallel speech."""

__version__ = "0.1.0"
