"""Small natural-image dataset cut from the photos bundled with scikit-image.

Used by the demo scripts when CIFAR-10 is not at hand.  Each photo is
downscaled by two and cut into non-overlapping 32x32 colour tiles; every fourth
tile goes to the validation split.
"""

import numpy as np
from skimage import data, transform

from lateral_dae.data import ImageSet

PHOTOS = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry")


def tiles(image, side=32):
    h, w = (s - s % side for s in image.shape[:2])
    image = image[:h, :w]
    return image.reshape(h // side, side, w // side, side, -1).swapaxes(1, 2).reshape(-1, side, side, image.shape[2])


def photo_tiles(side=32, scale=0.5):
    stacks = []
    for name in PHOTOS:
        img = getattr(data, name)().astype(np.float64) / 255.0
        img = transform.rescale(img, scale, channel_axis=-1, anti_aliasing=True)
        stacks.append(tiles(img, side))
    images = np.concatenate(stacks).astype(np.float32)
    mask = np.zeros(len(images), dtype=bool)
    mask[::4] = True
    return ImageSet(images, mask)


if __name__ == "__main__":
    s = photo_tiles()
    print(s.count, "tiles,", s.validation_count, "for validation")
