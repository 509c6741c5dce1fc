"""avbench: hard-negative construction, benchmark curation and human-aligned
scoring for audio-video generation evaluation."""

__version__ = "0.1.0"
