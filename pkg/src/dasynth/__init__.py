"""dasynth: planner-guided synthetic API-search dialogue generation.

The pipeline plans symbolic dialogue-act scripts with a simulated user and a
Q-learned dialogue manager grounded in an API knowledge base, then realizes
the scripts into natural-language chats through a chat-completions endpoint
and exports a fine-tuning corpus.
"""

__version__ = "0.1.0"

from .errors import DasynthError

__all__ = ["DasynthError", "__version__"]
