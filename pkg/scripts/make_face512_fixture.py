"""Regenerate the packaged 512x512 correlation fixture (src/leam/data/face512).

Searches procedural identities for a pair whose conv1 map (DeskNet seed 7),
stored and reloaded through the archive path, has exactly 584 pixels above
0.5 with no pixel within 1e-6 of the threshold. The anchor mask labels the
515 selected pixels nearest the nose tip as nose and the other 69 as face;
everything else keeps the rendered labels.
"""
import json
from pathlib import Path

import numpy as np

from leam.desknet import build_desknet, normalize_pixels, prepare
from leam.cli import stored_upsampled
from leam.imageio import write_pgm, write_png
from leam.maps import generate_maps
from leam.prng import stable_hash
from leam.synth import render

OUT = Path(__file__).resolve().parents[1] / "src" / "leam" / "data" / "face512"
SIZE, FACTOR = 512, 8
TARGET, NOSE, MARGIN = 584, 515, 1e-6
NOSE_LABEL, FACE_LABEL = 2, 1


def upscale(a):
    return np.repeat(np.repeat(a, FACTOR, axis=0), FACTOR, axis=1)


def candidate(net, k):
    seed = stable_hash("face512", k)
    (a, la, ma), (p, lp, _) = render(seed, 0), render(seed, 1)
    a, p, la, lp = upscale(a), upscale(p), upscale(la), upscale(lp)
    _, maps = generate_maps(net, prepare(net, normalize_pixels(a)), prepare(net, normalize_pixels(p)),
                            target=(SIZE, SIZE), layers=["conv1"])
    heat = stored_upsampled(maps[0].raw, (SIZE, SIZE))
    return seed, (a, la, ma), (p, lp), heat


def main(limit=5000):
    net = build_desknet(7)
    for k in range(limit):
        seed, (a, la, marks), (p, lp), heat = candidate(net, k)
        selected = heat > 0.5
        if int(selected.sum()) != TARGET or np.abs(heat - 0.5).min() < MARGIN:
            continue
        tip = (np.asarray(marks["nose-tip"]) + 0.5) * FACTOR - 0.5  # (x, y) in fixture pixels
        rows, cols = np.nonzero(selected)
        dist = np.hypot(cols - tip[0], rows - tip[1])
        order = np.argsort(dist, kind="stable")
        mask = la.copy()
        mask[rows[order[:NOSE]], cols[order[:NOSE]]] = NOSE_LABEL
        mask[rows[order[NOSE:]], cols[order[NOSE:]]] = FACE_LABEL
        for sub in ("images", "masks"):
            (OUT / sub).mkdir(parents=True, exist_ok=True)
        write_png(OUT / "images" / "anchor.png", a)
        write_png(OUT / "images" / "positive.png", p)
        write_pgm(OUT / "masks" / "anchor.pgm", mask)
        write_pgm(OUT / "masks" / "positive.pgm", lp)
        manifest = {
            "seed": 0, "layers": ["conv1"], "models": {"desknet7": "desknet:7"},
            "identities": {"face512": [
                {"name": "anchor", "image": "images/anchor.png", "mask": "masks/anchor.pgm", "reference": True},
                {"name": "positive", "image": "images/positive.png", "mask": "masks/positive.pgm"},
            ]},
        }
        (OUT / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
        print(f"candidate {k} (identity seed {seed}); closest value to 0.5 is "
              f"{np.abs(heat - 0.5).min():.3g} away; wrote {OUT}")
        return
    raise SystemExit(f"no candidate within {limit} identities")


if __name__ == "__main__":
    main()
