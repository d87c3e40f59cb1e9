"""Dataset manifests: identities, image entries and model references."""
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .desknet import TAGGED, build_desknet, load_weights
from .errors import FormatError

BUILTIN_MODEL = re.compile(r"^desknet:(\d+)$")


@dataclass(frozen=True)
class ImageEntry:
    identity: str
    name: str
    image: Path
    mask: Path = None
    landmarks: Path = None
    attributes: dict = field(default_factory=dict)
    reference: bool = False


@dataclass(frozen=True)
class Manifest:
    root: Path
    seed: int
    layers: tuple
    models: dict  # name -> weight path or "desknet:<seed>"
    identities: dict  # identity -> tuple of ImageEntry

    def entries(self):
        for ident in sorted(self.identities):
            yield from self.identities[ident]

    def by_name(self):
        return {e.name: e for e in self.entries()}

    def ordered_pairs(self):
        """All ordered (anchor, positive) pairs within each identity."""
        for ident in sorted(self.identities):
            group = self.identities[ident]
            for a in group:
                for p in group:
                    if a.name != p.name:
                        yield a, p


def _path(root, value):
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else (root / p)


def load_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("identities"), dict):
        raise FormatError(f"{path}: expected an object with an 'identities' mapping")
    root = path.resolve().parent
    identities = {}
    seen = set()
    for ident, items in sorted(doc["identities"].items()):
        if not isinstance(items, list) or len(items) < 2:
            raise FormatError(f"{path}: identity {ident!r} needs at least two images")
        entries = []
        for item in items:
            if "image" not in item:
                raise FormatError(f"{path}: image entry of {ident!r} lacks 'image'")
            name = str(item.get("name") or Path(item["image"]).stem)
            if name in seen:
                raise FormatError(f"{path}: duplicate image name {name!r}")
            seen.add(name)
            entries.append(ImageEntry(str(ident), name, _path(root, item["image"]), _path(root, item.get("mask")),
                                      _path(root, item.get("landmarks")), dict(item.get("attributes") or {}),
                                      bool(item.get("reference", False))))
        identities[str(ident)] = tuple(sorted(entries, key=lambda e: e.name))
    models = doc.get("models") or {}
    if isinstance(models, str):
        models = {Path(models).stem: models}
    layers = tuple(doc.get("layers") or TAGGED)
    return Manifest(root, int(doc.get("seed", 0)), layers, dict(models), identities)


def load_model(spec, name, root=None):
    """Weights from a DNW1 file, or a freshly initialised ``desknet:<seed>``."""
    match = BUILTIN_MODEL.match(str(spec))
    if match:
        return build_desknet(int(match.group(1)), name=name)
    return load_weights(_path(Path(root or "."), spec), name=name)


def resolve_seed(flag=None, manifest=None):
    """Seed precedence: explicit flag, ``LEAM_SEED``, manifest, then 0."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("LEAM_SEED", "").strip()
    if env:
        return int(env)
    if manifest is not None:
        return manifest.seed
    return 0
