#!/usr/bin/env python3
"""Convert Ultralytics YOLO text labels into an ave detection document.

Expects the files `yolo predict save_txt=True save_conf=True` (or `yolo track`)
writes: one `<image stem>.txt` per image, one line per box,

    class cx cy w h conf [track_id]

with box values normalised to the displayed (EXIF-rotated) image. The image
id is the file stem, matching `ave ingest`.

    yolo_to_ave.py --labels runs/detect/predict/labels --images photos > detections.json
"""

import argparse
import json
import sys
from pathlib import Path

from PIL import Image, ImageOps

COCO = (
    "person bicycle car motorcycle airplane bus train truck boat traffic_light fire_hydrant stop_sign "
    "parking_meter bench bird cat dog horse sheep cow elephant bear zebra giraffe backpack umbrella "
    "handbag tie suitcase frisbee skis snowboard sports_ball kite baseball_bat baseball_glove skateboard "
    "surfboard tennis_racket bottle wine_glass cup fork knife spoon bowl banana apple sandwich orange "
    "broccoli carrot hot_dog pizza donut cake chair couch potted_plant bed dining_table toilet tv laptop "
    "mouse remote keyboard cell_phone microwave oven toaster sink refrigerator book clock vase scissors "
    "teddy_bear hair_drier toothbrush"
).split()
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".JPG", ".JPEG")
SCHEMA_VERSION = 1


def display_size(path):
    with Image.open(path) as im:
        return ImageOps.exif_transpose(im).size


def find_image(images, stem):
    for suffix in IMAGE_SUFFIXES:
        p = images / (stem + suffix)
        if p.exists():
            return p
    return None


def convert(labels, images, names, min_conf):
    out = []
    for txt in sorted(labels.glob("*.txt")):
        img = find_image(images, txt.stem)
        if img is None:
            sys.exit(f"{txt}: no image named {txt.stem}.jpg in {images}")
        w, h = display_size(img)
        for lineno, line in enumerate(txt.read_text().splitlines(), 1):
            f = line.split()
            if not f:
                continue
            if len(f) not in (6, 7):
                sys.exit(f"{txt}:{lineno}: expected `class cx cy w h conf [track]`, got {len(f)} fields")
            cls = int(f[0])
            cx, cy, bw, bh, conf = map(float, f[1:6])
            if conf < min_conf:
                continue
            det = {
                "image_id": txt.stem,
                "class_label": names[cls].replace("_", " ") if cls < len(names) else f"class_{cls}",
                "confidence": round(conf, 6),
                # Clamp against rounding just past the frame edge.
                "bbox": [
                    round(max(0.0, (cx - bw / 2) * w), 3),
                    round(max(0.0, (cy - bh / 2) * h), 3),
                    round(min(bw * w, w), 3),
                    round(min(bh * h, h), 3),
                ],
            }
            if len(f) == 7:
                det["identity"] = f"track-{int(float(f[6]))}"
            out.append(det)
    return {"schema_version": SCHEMA_VERSION, "detections": out}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--labels", type=Path, required=True, help="directory of YOLO .txt label files")
    ap.add_argument("--images", type=Path, required=True, help="directory holding the matching images")
    ap.add_argument("--names", type=Path, help="class names, one per line (default: COCO-80)")
    ap.add_argument("--min-conf", type=float, default=0.0)
    args = ap.parse_args()
    names = args.names.read_text().split() if args.names else COCO
    doc = convert(args.labels, args.images, names, args.min_conf)
    json.dump(doc, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
