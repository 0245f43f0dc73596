"""Template prompt generation over shape and color words.

Prompts come in two granularities (coarse / detailed) drawn from fixed
templates, so text is deterministic given the sampled words and the
granularity index.
"""

from __future__ import annotations

import numpy as np

# Named palette; mean over the table is close to mid-gray so that an
# "unknown color" guess averaged over the table blends into the background.
COLOR_TABLE: dict[str, tuple[float, float, float]] = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.10, 0.20, 0.90),
    "yellow": (0.92, 0.88, 0.10),
    "cyan": (0.10, 0.85, 0.85),
    "magenta": (0.88, 0.12, 0.85),
    "orange": (0.95, 0.55, 0.08),
    "purple": (0.50, 0.12, 0.80),
    "white": (0.95, 0.95, 0.95),
    "black": (0.06, 0.06, 0.06),
}

SHAPE_WORDS = {"cuboid": "box", "uv_sphere": "ball"}


def color_name_to_rgb(name: str) -> tuple[float, float, float]:
    return COLOR_TABLE[name]


def _direction_cos(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - 0.5, b - 0.5
    return float(da @ db / (np.linalg.norm(da) * np.linalg.norm(db)))


def sample_palette(
    n: int, rng: np.random.Generator, min_corr: float | None = 0.0
) -> tuple[list[str], np.ndarray]:
    """Draw n distinct named colors; returns (names, (n,3) float array).

    For n == 2 pairs are redrawn until their gray-centered directions correlate
    at least min_corr, so the two colors never cancel in a bag-of-words
    embedding (pass min_corr=None to disable).
    """
    names = list(COLOR_TABLE)
    for _ in range(256):
        idx = rng.choice(len(names), size=min(n, len(names)), replace=False)
        chosen = [names[i] for i in idx]
        rgb = np.array([COLOR_TABLE[c] for c in chosen], dtype=np.float64)
        if n != 2 or min_corr is None or _direction_cos(rgb[0], rgb[1]) >= min_corr:
            return chosen, rgb
    raise RuntimeError("palette sampling failed to satisfy the correlation bound")


def make_prompt(shape: str, color_names: list[str], granularity: int) -> str:
    """granularity 0 = coarse summary, 1 = detailed description."""
    word = SHAPE_WORDS.get(shape, shape)
    if not color_names:
        color_names = ["gray"]
    if granularity == 0:
        if len(color_names) == 1:
            return f"a {color_names[0]} {word}"
        return f"a {color_names[0]} and {color_names[1]} {word}"
    listed = ", ".join(color_names)
    return f"a {word} with {listed} faces moving across the scene while turning"
