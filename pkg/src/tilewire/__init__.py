"""tilewire: a sort-first tiled-display cluster renderer, simulated end to end.

App nodes stream a compact graphics command protocol (bucketed, state
tracked, optionally display-list cached) to software tile servers over real
sockets or bandwidth-throttled in-process channels; a master broadcasts user
input so every node replays an identical camera. The bench module measures
how frame rate scales with scene size, bandwidth, and caching.
"""

from ._backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
