"""Regenerate src/leam/data/warm_colormap.csv (black -> red -> yellow -> white)."""
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "leam" / "data" / "warm_colormap.csv"


def warm_ramp():
    t = np.arange(256) / 255.0
    channels = [np.clip(3 * t - k, 0, 1) for k in range(3)]
    return np.rint(np.stack(channels, axis=1) * 255).astype(np.uint8)


def main():
    lines = ["index,r,g,b"]
    lines += [f"{i},{r},{g},{b}" for i, (r, g, b) in enumerate(warm_ramp().tolist())]
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
