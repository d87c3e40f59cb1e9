"""Procedural face-like images with exact region masks and landmarks.

Stands in for a face dataset plus parser/landmark detector output. Each
identity fixes a palette and facial geometry; each image of the identity
adds a small pose (rotation, scale, shift), lighting change, mouth opening
and pixel noise. "Left" refers to the image-left side.
"""
import json
import math
from pathlib import Path

import numpy as np

from .desknet import build_desknet, save_weights
from .imageio import write_pgm, write_png
from .prng import Xoshiro256, stable_hash

GENDERS = ("Male", "Female")
ETHNICITIES = ("Caucasian", "African", "East Asian", "South Asian")


def _u(rng, lo, hi):
    return lo + (hi - lo) * rng.random()


def identity_params(identity_seed):
    rng = Xoshiro256(identity_seed)
    skin = np.array([_u(rng, 90, 235), _u(rng, 60, 190), _u(rng, 40, 160)])
    return {
        "skin": skin,
        "hair": np.array([_u(rng, 10, 120), _u(rng, 5, 90), _u(rng, 0, 60)]),
        "background": np.array([_u(rng, 20, 240) for _ in range(3)]),
        "clothes": np.array([_u(rng, 0, 255) for _ in range(3)]),
        "lips": skin * np.array([0.85, 0.55, 0.55]),
        "face_a": _u(rng, 0.50, 0.62),
        "face_b": _u(rng, 0.66, 0.78),
        "eye_dx": _u(rng, 0.19, 0.27),
        "eye_y": _u(rng, -0.20, -0.10),
        "eye_w": _u(rng, 0.08, 0.12),
        "eye_h": _u(rng, 0.035, 0.055),
        "brow_gap": _u(rng, 0.08, 0.13),
        "nose_len": _u(rng, 0.18, 0.28),
        "nose_w": _u(rng, 0.07, 0.11),
        "mouth_y": _u(rng, 0.30, 0.40),
        "mouth_w": _u(rng, 0.17, 0.25),
        "hair_top": _u(rng, 0.10, 0.28),
        "gender": GENDERS[rng.randbelow(len(GENDERS))],
        "ethnicity": ETHNICITIES[rng.randbelow(len(ETHNICITIES))],
        "age": 18 + rng.randbelow(50),
    }


def image_params(identity_seed, index):
    rng = Xoshiro256(stable_hash("image", identity_seed, index))
    return {
        "theta": _u(rng, -0.14, 0.14),
        "scale": _u(rng, 0.93, 1.07),
        "shift": (_u(rng, -0.05, 0.05), _u(rng, -0.05, 0.05)),
        "light": _u(rng, 0.85, 1.15),
        "mouth_open": _u(rng, 0.0, 0.05),
        "noise_seed": stable_hash("noise", identity_seed, index),
        "age_offset": rng.randbelow(6),
    }


def _ellipse(u, v, cu, cv, a, b):
    return ((u - cu) / a) ** 2 + ((v - cv) / b) ** 2 <= 1.0


def render(identity_seed, index, size=64):
    """Return (rgb uint8 [H,W,3], labels uint8 [H,W], landmarks dict)."""
    ip = identity_params(identity_seed)
    pp = image_params(identity_seed, index)
    H = W = int(size)
    half = (W - 1) / 2.0
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    x = (cols - half) / half - pp["shift"][0]
    y = (rows - half) / half - pp["shift"][1]
    c, s = math.cos(-pp["theta"]), math.sin(-pp["theta"])
    u = (c * x - s * y) / pp["scale"]
    v = (s * x + c * y) / pp["scale"]

    labels = np.zeros((H, W), dtype=np.uint8)
    fa, fb = ip["face_a"], ip["face_b"]
    labels[(v > 0.55) & (np.abs(u) < 0.95)] = 14
    labels[(v > 0.35) & (np.abs(u) < 0.22) & (v <= 0.85)] = 13
    labels[_ellipse(u, v, 0, -0.12, fa + 0.1, fb - ip["hair_top"] + 0.25) & (v < 0.1)] = 12
    labels[_ellipse(u, v, -fa, -0.02, 0.07, 0.14)] = 10
    labels[_ellipse(u, v, fa, -0.02, 0.07, 0.14)] = 11
    labels[_ellipse(u, v, 0, 0.0, fa, fb)] = 1
    ey, edx = ip["eye_y"], ip["eye_dx"]
    brow = ey - ip["brow_gap"]
    labels[_ellipse(u, v, -edx, brow, ip["eye_w"] * 1.2, 0.025)] = 8
    labels[_ellipse(u, v, edx, brow, ip["eye_w"] * 1.2, 0.025)] = 9
    labels[_ellipse(u, v, -edx, ey, ip["eye_w"], ip["eye_h"])] = 6
    labels[_ellipse(u, v, edx, ey, ip["eye_w"], ip["eye_h"])] = 7
    nose_top, nose_tip = ey + 0.03, ey + 0.03 + ip["nose_len"]
    frac = np.clip((v - nose_top) / (nose_tip - nose_top), 0, 1)
    labels[(v >= nose_top) & (v <= nose_tip) & (np.abs(u) <= ip["nose_w"] * (0.35 + 0.65 * frac))] = 2
    my, mw, mo = ip["mouth_y"], ip["mouth_w"], pp["mouth_open"]
    labels[_ellipse(u, v, 0, my - 0.02 - mo / 2, mw, 0.03)] = 4
    labels[_ellipse(u, v, 0, my + 0.03 + mo / 2, mw * 0.9, 0.035)] = 5
    if mo > 0.01:
        labels[_ellipse(u, v, 0, my + 0.005, mw * 0.8, mo / 2 + 0.005)] = 3

    palette = np.zeros((19, 3))
    palette[0] = ip["background"]
    palette[[1, 10, 11, 13]] = ip["skin"]
    palette[2] = ip["skin"] * 0.9
    palette[3] = (40, 10, 15)
    palette[[4, 5]] = ip["lips"]
    palette[[6, 7]] = (245, 245, 245)
    palette[[8, 9, 12]] = ip["hair"]
    palette[14] = ip["clothes"]
    rgb = palette[labels]
    pupil = _ellipse(u, v, -edx, ey, ip["eye_h"], ip["eye_h"]) | _ellipse(u, v, edx, ey, ip["eye_h"], ip["eye_h"])
    rgb[pupil] = (30, 25, 20)
    shade = 1.0 - 0.25 * np.clip(u * u + 0.5 * v * v, 0, 1)
    rgb = rgb * (pp["light"] * shade)[..., None]
    noise = np.asarray(Xoshiro256(pp["noise_seed"]).normals(H * W * 3)).reshape(H, W, 3)
    rgb = np.clip(np.rint(rgb + 6.0 * noise), 0, 255).astype(np.uint8)

    canonical = {
        "left-eye-outer": (-edx - ip["eye_w"], ey), "left-eye-inner": (-edx + ip["eye_w"], ey),
        "right-eye-inner": (edx - ip["eye_w"], ey), "right-eye-outer": (edx + ip["eye_w"], ey),
        "nose-tip": (0.0, nose_tip), "mouth-left": (-mw, my), "mouth-right": (mw, my),
    }
    cp, sp = math.cos(pp["theta"]), math.sin(pp["theta"])
    landmarks = {}
    for name, (cu, cv) in canonical.items():
        px = pp["scale"] * (cp * cu - sp * cv) + pp["shift"][0]
        py = pp["scale"] * (sp * cu + cp * cv) + pp["shift"][1]
        landmarks[name] = [float(px * half + half), float(py * half + half)]
    return rgb, labels, landmarks


def attributes(identity_seed, index):
    ip = identity_params(identity_seed)
    return {"gender": ip["gender"], "ethnicity": ip["ethnicity"],
            "age": ip["age"] + image_params(identity_seed, index)["age_offset"]}


def write_dataset(out_dir, identities=15, images_per_identity=2, size=64, seed=0,
                  model_seeds=(7,)):
    """Write images, masks, landmarks, DeskNet weights and ``manifest.json``."""
    out = Path(out_dir)
    for sub in ("images", "masks", "landmarks", "models"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = {"seed": seed, "layers": ["conv1", "conv2", "conv3"], "models": {}, "identities": {}}
    for ms in model_seeds:
        name = f"desknet{ms}"
        save_weights(build_desknet(ms, name=name), out / "models" / f"{name}.dnw")
        manifest["models"][name] = f"models/{name}.dnw"
    for k in range(identities):
        ident = f"id{k:03d}"
        ident_seed = stable_hash("identity", seed, k)
        entries = []
        for i in range(images_per_identity):
            rgb, labels, marks = render(ident_seed, i, size)
            stem = f"{ident}_{i:02d}"
            write_png(out / "images" / f"{stem}.png", rgb)
            write_pgm(out / "masks" / f"{stem}.pgm", labels)
            doc = dict(marks, width=size, height=size)
            (out / "landmarks" / f"{stem}.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
            entries.append({"name": stem, "image": f"images/{stem}.png", "mask": f"masks/{stem}.pgm",
                            "landmarks": f"landmarks/{stem}.json", "attributes": attributes(ident_seed, i),
                            "reference": i == 0})
        manifest["identities"][ident] = entries
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return out / "manifest.json"
