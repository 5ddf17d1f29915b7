from ._svf import *  # noqa: F401,F403
