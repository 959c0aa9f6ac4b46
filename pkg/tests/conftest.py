"""Shared fixtures: synthetic datasets small enough to run the full pipeline quickly."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable


def make_image(path, h, w, seed):
    from PIL import Image

    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)
    return arr


def rect_polygon(x, y, w, h):
    return [float(x), float(y), float(x + w), float(y), float(x + w), float(y + h), float(x), float(y + h)]


def build_dataset(root, n_images=4, size=(32, 48), seed=0, rle_every=3):
    """Write PNGs plus a COCO-style JSON; every `rle_every`-th annotation is RLE."""
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    h, w = size
    images, annotations = [], []
    ann_id = 1
    for i in range(n_images):
        file_name = f"img_{i:04d}.png"
        make_image(images_dir / file_name, h, w, seed + i)
        images.append({"id": i + 1, "file_name": file_name, "width": w, "height": h})
        for _ in range(int(rng.integers(1, 4))):
            bw = int(rng.integers(4, max(5, w // 3)))
            bh = int(rng.integers(4, max(5, h // 3)))
            x = int(rng.integers(0, w - bw))
            y = int(rng.integers(0, h - bh))
            if ann_id % rle_every == 0:
                mask = np.zeros((h, w), np.uint8)
                mask[y : y + bh, x : x + bw] = 1
                flat = mask.ravel(order="F")
                counts, prev, run = [], 0, 0
                for v in flat:
                    if v == prev:
                        run += 1
                    else:
                        counts.append(run)
                        prev = v
                        run = 1
                counts.append(run)
                seg = {"size": [h, w], "counts": counts}
                iscrowd = 1
            else:
                seg = [rect_polygon(x, y, bw, bh)]
                iscrowd = 0
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i + 1,
                    "category_id": 1 + ann_id % 2,
                    "segmentation": seg,
                    "bbox": [float(x), float(y), float(bw), float(bh)],
                    "area": float(bw * bh),
                    "iscrowd": iscrowd,
                }
            )
            ann_id += 1
    payload = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "widget"}, {"id": 2, "name": "gadget"}],
    }
    ann_path = root / "annotations.json"
    ann_path.write_text(json.dumps(payload))
    return ann_path, images_dir


@pytest.fixture
def tiny_dataset(tmp_path):
    ann_path, images_dir = build_dataset(tmp_path, n_images=4, size=(32, 48), seed=7)
    return ann_path, images_dir, tmp_path
