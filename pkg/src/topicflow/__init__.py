"""Topic-guided abstractive summarization with a flow-based neural topic model."""

__version__ = "0.1.0"
