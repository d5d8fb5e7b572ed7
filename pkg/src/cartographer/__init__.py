"""Cartographer: map an image collection into an explorable 2-D nebula.

Pipeline stages: ingest -> embed -> layout -> atlas -> serve, plus a
gesture engine that turns pose-keypoint streams into interface events.
"""

__version__ = "0.1.0"
