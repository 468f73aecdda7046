import numpy as np
import pandas as pd
import png
import pytest

from burstfuse.bench import textured_truth
from burstfuse.rawcore import BayerFrame, Burst


@pytest.fixture
def colour_truth():
    return textured_truth(48, seed=3)


@pytest.fixture
def grey_truth():
    grey = textured_truth(128, seed=5)[..., :1]
    return np.repeat(grey, 3, axis=2)


@pytest.fixture
def constant_burst():
    frames = tuple(BayerFrame(np.full((32, 32), 0.4)) for _ in range(4))
    return Burst(frames)


def read_report_csv(path):
    return pd.read_csv(path, comment='#')


def write_rgb_png(path, rgb, bitdepth=8):
    rgb = np.clip(np.asarray(rgb), 0.0, 1.0)
    height, width, _ = rgb.shape
    scale = 2 ** bitdepth - 1
    rows = np.rint(rgb * scale).astype(int).reshape(height, width * 3)
    writer = png.Writer(width, height, greyscale=False, bitdepth=bitdepth)
    with open(path, 'wb') as handle:
        writer.write(handle, rows.tolist())
