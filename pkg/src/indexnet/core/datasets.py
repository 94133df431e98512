"""Small synthetic datasets used by the built-in run configurations."""

from typing import Any, Callable, Dict

import numpy as np

from ..utils.logger import get_logger
from .data_io import Dataset, OneHot, encode_targets
from .errors import ConfigError
from .nn_math import SeedLike, make_rng

logger = get_logger(__name__)

DEFAULT_TEXT = "hello world "


def xor() -> Dataset:
    """The four XOR points with one-hot targets over two classes."""
    inputs = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1, 0])
    return Dataset(inputs, encode_targets(labels, OneHot(2)), labels=labels)


def bars(
    count: int = 512, size: int = 8, noise: float = 0.1, seed: SeedLike = 0
) -> Dataset:
    """
    Single-channel size x size images of one bar in four classes.

    0: horizontal bar, 1: vertical bar, 2: diagonal, 3: anti-diagonal. Bars
    are placed at a random offset and gaussian noise is added; pixel values
    are clipped to [0, 1].
    """
    rng = make_rng(seed)
    labels = rng.integers(0, 4, size=count)
    images = np.zeros((count, 1, size, size))
    offsets = rng.integers(0, size, size=count)
    for t, (label, offset) in enumerate(zip(labels, offsets)):
        shift = int(offset) - size // 2
        match int(label):
            case 0:
                images[t, 0, offset, :] = 1.0
            case 1:
                images[t, 0, :, offset] = 1.0
            case 2:
                images[t, 0] = np.eye(size, k=shift // 2)
            case 3:
                images[t, 0] = np.fliplr(np.eye(size, k=shift // 2))
    images = np.clip(images + noise * rng.standard_normal(images.shape), 0.0, 1.0)
    return Dataset(images, encode_targets(labels, OneHot(4)), labels=labels)


def sine(count: int = 256, steps: int = 32, seed: SeedLike = 0) -> Dataset:
    """
    Next-step sine regression.

    inputs[t, 0, tau] = sin(w tau + phi) and targets[t, 0, tau] is the value
    one step later, with w and phi drawn per sequence.
    """
    rng = make_rng(seed)
    omega = rng.uniform(0.15, 0.45, size=(count, 1, 1))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(count, 1, 1))
    tau = np.arange(steps + 1).reshape(1, 1, -1)
    wave = np.sin(omega * tau + phase)
    return Dataset(wave[:, :, :-1], wave[:, :, 1:])


def char_loop(
    count: int = 128, steps: int = 8, text: str = DEFAULT_TEXT, seed: SeedLike = 0
) -> Dataset:
    """
    Next-character prediction on a looping string.

    Windows start at random offsets of the repeated text. Inputs and targets
    are one-hot over the sorted alphabet, shaped [count, V, steps].
    """
    if len(text) < 2:
        raise ConfigError("the character loop needs at least two characters")
    rng = make_rng(seed)
    alphabet = sorted(set(text))
    codes = np.array([alphabet.index(ch) for ch in text])
    starts = rng.integers(0, len(text), size=count)
    positions = (starts.reshape(-1, 1) + np.arange(steps + 1)) % len(text)
    sequence = codes[positions]
    eye = np.eye(len(alphabet))
    inputs = eye[sequence[:, :-1]].transpose(0, 2, 1)
    targets = eye[sequence[:, 1:]].transpose(0, 2, 1)
    return Dataset(inputs, targets, labels=sequence[:, 1:])


SYNTHETIC: Dict[str, Callable[..., Dataset]] = {
    "xor": xor,
    "bars": bars,
    "sine": sine,
    "char_loop": char_loop,
}


def synthetic(name: str, **kwargs: Any) -> Dataset:
    """Build a synthetic dataset by name."""
    try:
        factory = SYNTHETIC[name]
    except KeyError:
        raise ConfigError(
            f"unknown synthetic dataset {name!r}; choose from {', '.join(SYNTHETIC)}"
        ) from None
    dataset = factory(**kwargs)
    logger.debug("Synthetic dataset %s: inputs %s", name, dataset.inputs.shape)
    return dataset
