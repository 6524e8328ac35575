"""Synthetic class-per-directory image trees for smoke tests and demos."""

from pathlib import Path

import numpy as np

from .imaging import encode_image

TOY_CLASSES = ("covid", "normal", "viral")
TOY_MEANS = (60, 128, 196)


def toy_images(n_per_class=20, size=224, noise=20.0, seed=0, means=TOY_MEANS):
    """``(images, labels)``: grayscale noise fields whose class sets the mean."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, mean in enumerate(means):
        for _ in range(n_per_class):
            field = rng.normal(mean, noise, size=(size, size, 1))
            images.append(np.clip(np.rint(field), 0, 255).astype(np.uint8))
            labels.append(label)
    return images, np.array(labels)


def write_toy_tree(root, n_per_class=20, size=224, noise=20.0, seed=0, classes=TOY_CLASSES):
    """Write ``root/<class>/img_NNN.png``; returns the root path."""
    root = Path(root)
    images, labels = toy_images(n_per_class, size, noise, seed, TOY_MEANS[: len(classes)])
    for i, (img, label) in enumerate(zip(images, labels)):
        d = root / classes[label]
        d.mkdir(parents=True, exist_ok=True)
        encode_image(img, d / f"img_{i:03d}.png")
    return root
