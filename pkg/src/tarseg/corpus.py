"""Corpus manifests: one JSON line per scene, files alongside.

Record fields: ``id``, ``rng_seed``, ``background``, ``image`` (PNG), ``masks``
(one PNG per instance), ``seeds`` (TSR1 soft labels, kept at full precision),
``symbols``, ``chars``, plus per-instance geometry (``boxes``, ``thickness``).
Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from pathlib import Path

from .imageio import read_gray, read_rgb, write_mask, write_rgb
from .synth import GlyphInstance, GlyphScene
from .tensor import load_tensor, save_tensor

MANIFEST_NAME = "manifest.jsonl"


def write_corpus(scenes, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, scene in enumerate(scenes):
        stem = f"scene_{i:04d}"
        image = f"{stem}.png"
        write_rgb(out / image, scene.image)
        masks, seeds = [], []
        for k, inst in enumerate(scene.instances):
            masks.append(f"{stem}_{k}_mask.png")
            seeds.append(f"{stem}_{k}_seed.tsr")
            write_mask(out / masks[-1], inst.mask)
            save_tensor(out / seeds[-1], inst.seed)
        record = {
            "id": i,
            "rng_seed": int(scene.rng_seed),
            "background": scene.background_kind,
            "image": image,
            "masks": masks,
            "seeds": seeds,
            "symbols": [inst.symbol for inst in scene.instances],
            "chars": [inst.char for inst in scene.instances],
            "boxes": [list(map(int, inst.box)) for inst in scene.instances],
            "thickness": [float(inst.thickness) for inst in scene.instances],
        }
        lines.append(json.dumps(record, sort_keys=True))
    path = out / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_corpus(manifest) -> list[GlyphScene]:
    manifest = Path(manifest)
    root = manifest.parent
    scenes = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{manifest}:{lineno}: invalid JSON ({exc.msg})") from None
        missing = {"image", "masks", "seeds", "symbols"} - rec.keys()
        if missing:
            raise ValueError(f"{manifest}:{lineno}: record lacks {sorted(missing)}")
        if not len(rec["masks"]) == len(rec["seeds"]) == len(rec["symbols"]):
            raise ValueError(f"{manifest}:{lineno}: masks, seeds and symbols differ in length")
        n = len(rec["masks"])
        chars = rec.get("chars", [""] * n)
        boxes = rec.get("boxes", [(0, 0, 0, 0)] * n)
        thick = rec.get("thickness", [0.0] * n)
        instances = []
        for k in range(n):
            mask = (read_gray(root / rec["masks"][k]) >= 0.5).astype("uint8")
            seed = load_tensor(root / rec["seeds"][k])
            instances.append(GlyphInstance(mask, int(rec["symbols"][k]), chars[k], seed, tuple(boxes[k]),
                                           float(thick[k]), (0.0, 0.0), 0.0))
        scenes.append(GlyphScene(read_rgb(root / rec["image"]), instances,
                                 rec.get("background", "unknown"), int(rec.get("rng_seed", 0))))
    return scenes
