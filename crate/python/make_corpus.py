"""Regenerate the 512x512 test corpus used by the integration tests.

Images come from scikit-image's bundled sample data. Each is converted to
8-bit grayscale (and a few to RGB), resized/cropped to 512x512 and written as
binary PGM/PPM.
"""
import pathlib
import sys

import numpy as np
import skimage.data as data
from skimage.color import rgb2gray
from skimage.transform import resize

GRAY = [
    "camera",
    "astronaut",
    "coffee",
    "chelsea",
    "moon",
    "immunohistochemistry",
    "retina",
    "rocket",
    "brick",
    "gravel",
]
COLOR = ["astronaut", "immunohistochemistry", "retina"]


def square(img):
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top : top + s, left : left + s]


def to_u8(img, size):
    img = square(img)
    out = resize(img, (size, size), anti_aliasing=True, preserve_range=True)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def write_pnm(path, img):
    if img.ndim == 2:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    path.write_bytes(header.encode() + img.tobytes())


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(GRAY):
        img = getattr(data, name)()
        if img.ndim == 3:
            img = rgb2gray(img) * 255.0
        write_pnm(out / f"{i:02}_{name}.pgm", to_u8(img.astype(np.float64), 512))
    for name in COLOR:
        img = getattr(data, name)().astype(np.float64)
        write_pnm(out / f"color_{name}.ppm", to_u8(img, 256))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data")
