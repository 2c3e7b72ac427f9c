try:
    from ._selfcolor import *  # noqa: F401,F403  (installed layout)
except ImportError:
    from _selfcolor import *  # noqa: F401,F403  (in-tree build)
