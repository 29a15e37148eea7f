"""Quality-aware scheduling of retrieval-augmented LLM serving across edge nodes."""

__version__ = "0.1.0"
