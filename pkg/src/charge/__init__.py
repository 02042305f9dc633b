"""charge: build and evaluate chart+text multimodal QA datasets."""

__version__ = "0.1.0"
