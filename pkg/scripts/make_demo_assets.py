#!/usr/bin/env python3
"""Materialize a self-contained demo dataset tree (meshes, backgrounds, manifest).

The output directory can be fed straight to the CLI:

    python scripts/make_demo_assets.py --out demo
    humanforge validate demo/manifest.toml
    humanforge generate demo/manifest.toml --out dataset --workers 4
    humanforge preview demo/manifest.toml --out preview
"""

import argparse

from humanforge.demo import write_demo_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo", help="output directory")
    parser.add_argument("--backgrounds", type=int, default=5)
    parser.add_argument("--models", type=int, default=5)
    parser.add_argument("--width", type=int, default=640)
    parser.add_argument("--height", type=int, default=480)
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    manifest = write_demo_dataset(
        args.out, n_backgrounds=args.backgrounds, n_models=args.models,
        width=args.width, height=args.height, image_count=args.images, seed=args.seed,
    )
    print(f"wrote demo assets; manifest at {manifest}")


if __name__ == "__main__":
    main()
