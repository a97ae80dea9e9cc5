from __future__ import annotations

import numpy as np

from causemap.core import Image


def gray_image(height: int, width: int, value: float = 0.5, channels: int = 1) -> Image:
    return Image.from_array(np.full((height, width, channels), value, dtype=np.float64))


def image_with_bright(
    height: int, width: int, bright: list[tuple[int, int]], base: float = 0.2, hot: float = 0.9
) -> Image:
    data = np.full((height, width, 1), base, dtype=np.float64)
    for r, c in bright:
        data[r, c, 0] = hot
    return Image.from_array(data)
