"""Locate-and-focus agent harness for video scene-text QA.

Subpackages: data_model (manifests), grammar (agent output format), backends
(chat endpoint / scripted / record-replay), engine (two-turn episodes),
metrics (ACC/ANLS/hit rate), curation (SFT/RL corpora), grpo (toy RL lab),
oracle (frame-wise upper bound), reporting, cli.
"""

__version__ = "0.1.0"
