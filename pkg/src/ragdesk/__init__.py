"""ragdesk: retrieval-augmented question answering for support agents."""

__version__ = "0.1.0"
