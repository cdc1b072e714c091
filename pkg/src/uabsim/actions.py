"""The discrete movement action set shared by the environment and the masks."""

from enum import IntEnum

import numpy as np


class Action(IntEnum):
    UP = 0
    RIGHT = 1
    DOWN = 2
    LEFT = 3


ACTION_VECTORS = {
    Action.UP: np.array([0.0, 1.0]),
    Action.RIGHT: np.array([1.0, 0.0]),
    Action.DOWN: np.array([0.0, -1.0]),
    Action.LEFT: np.array([-1.0, 0.0]),
}
