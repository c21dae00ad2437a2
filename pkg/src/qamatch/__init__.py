"""QA matching in two-party multi-turn dialogues."""

__version__ = "0.1.0"
