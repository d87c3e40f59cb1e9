"""Black-pixel validation occlusions and cosine-similarity drop sweeps."""
import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, astuple, fields

import numpy as np

from .desknet import black_value, prepare
from .errors import DimensionError, LeamError
from .maps import cosine_similarity, generate_maps
from .prng import Xoshiro256, stable_hash
from .regions import select_top_percent, top_count
from .tensor import forward

MODES = ("leam", "random", "leam-identity")


@dataclass(frozen=True)
class OcclusionMask:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple
    percent: float
    origin: str  # leam | random | leam-identity
    source: str = ""  # "model/layer" for guided masks
    seed: int = None
    requested: int = 0

    def __len__(self):
        return len(self.rows)

    @property
    def scarce(self):
        return len(self.rows) < self.requested


@dataclass(frozen=True)
class OcclusionOutcome:
    model: str
    pair_id: str
    mode: str
    percent: float
    seed: int
    baseline: float
    occluded: float
    drop: float
    layer: str = ""
    source_model: str = ""
    pixels: int = 0
    status: str = "ok"

    def sort_key(self):
        return (self.model, self.pair_id, self.mode, self.percent, self.seed)


OUTCOME_COLUMNS = tuple(f.name for f in fields(OcclusionOutcome))


@dataclass(frozen=True)
class Pair:
    pair_id: str
    identity: str
    anchor: np.ndarray  # normalised [3,H,W] at source resolution
    positive: np.ndarray


def leam_guided_mask(map_, p, source="", origin="leam"):
    sel = select_top_percent(map_, p)
    return OcclusionMask(sel.rows, sel.cols, sel.shape, float(p), origin, source,
                         requested=sel.requested)


def random_mask(shape, p, seed):
    H, W = shape
    total = H * W
    k = top_count(p, total)
    chosen = np.sort(np.asarray(Xoshiro256(seed).sample(range(total), k), dtype=np.int64))
    rows, cols = np.unravel_index(chosen, (H, W))
    return OcclusionMask(rows, cols, (H, W), float(p), "random", seed=int(seed), requested=k)


def apply_occlusion(image, mask, black=None):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[1:] != tuple(mask.shape):
        raise DimensionError(f"mask grid {mask.shape} does not match image {image.shape}")
    H, W = mask.shape
    if len(mask) and (mask.rows.min() < 0 or mask.cols.min() < 0
                      or mask.rows.max() >= H or mask.cols.max() >= W):
        raise IndexError("occlusion coordinate out of bounds")
    out = image.copy()
    out[:, mask.rows, mask.cols] = black_value() if black is None else black
    return out


def _embedding(net, image):
    return forward(net, prepare(net, image)).embedding


def similarity_drop(net, anchor, positive, mask, pair_id="", model_id="", baseline=None,
                    positive_embedding=None):
    """Drop in cosine similarity when the anchor (only) is occluded."""
    if positive_embedding is None:
        positive_embedding = _embedding(net, positive)
    if baseline is None:
        baseline = cosine_similarity(_embedding(net, anchor), positive_embedding)
    if len(mask) == 0:
        occluded = baseline
    else:
        occluded = cosine_similarity(_embedding(net, apply_occlusion(anchor, mask)), positive_embedding)
    return OcclusionOutcome(model_id or getattr(net, "name", ""), pair_id, mask.origin, mask.percent,
                            mask.seed if mask.seed is not None else 0,
                            baseline, occluded, baseline - occluded, pixels=len(mask))


def anchor_map(net, pair, layer):
    """Upsampled LEAM map of ``pair`` at the anchor's own resolution."""
    _, maps = generate_maps(net, prepare(net, pair.anchor), prepare(net, pair.positive),
                            target=pair.anchor.shape[1:], layers=[layer])
    return maps[0].upsampled


def identity_average_maps(maps, pairs):
    """Mean upsampled map per identity, keyed by identity."""
    groups = {}
    for pair in pairs:
        groups.setdefault(pair.identity, []).append(maps[pair.pair_id])
    return {ident: np.mean(stack, axis=0) for ident, stack in groups.items()
            if len({m.shape for m in stack}) == 1}


def cell_seed(seed, pair_id, percent):
    return (int(seed) ^ stable_hash(pair_id, repr(float(percent)))) & ((1 << 64) - 1)


def _sweep_pair(job):
    model_name, net, pair, guided, percents, modes, seeds, layer, source = job
    out = []
    try:
        positive_embedding = _embedding(net, pair.positive)
        baseline = cosine_similarity(_embedding(net, pair.anchor), positive_embedding)
    except LeamError as exc:
        for mode in modes:
            for p in percents:
                for s in seeds:
                    out.append(OcclusionOutcome(model_name, pair.pair_id, mode, float(p), int(s),
                                                float("nan"), float("nan"), float("nan"), layer, source,
                                                0, f"error: {exc}"))
        return out
    for mode in modes:
        for p in percents:
            cached = None
            for s in seeds:
                try:
                    if mode == "random":
                        mask = random_mask(pair.anchor.shape[1:], p, cell_seed(s, pair.pair_id, p))
                        rec = similarity_drop(net, pair.anchor, pair.positive, mask, pair.pair_id, model_name,
                                              baseline, positive_embedding)
                    else:
                        if cached is None:
                            mask = leam_guided_mask(guided[mode], p, f"{source}/{layer}", origin=mode)
                            cached = similarity_drop(net, pair.anchor, pair.positive, mask, pair.pair_id,
                                                     model_name, baseline, positive_embedding)
                        rec = cached
                    status = "ok" if rec.pixels >= top_count(p, pair.anchor.shape[1] * pair.anchor.shape[2]) \
                        else "scarce"
                    out.append(OcclusionOutcome(model_name, pair.pair_id, mode, float(p), int(s), rec.baseline,
                                                rec.occluded, rec.drop, layer,
                                                source if mode != "random" else "", rec.pixels, status))
                except (LeamError, ValueError, IndexError) as exc:
                    out.append(OcclusionOutcome(model_name, pair.pair_id, mode, float(p), int(s),
                                                baseline, float("nan"), float("nan"), layer, source, 0,
                                                f"error: {exc}"))
    return out


def occlusion_sweep(models, pairs, percents, modes=("leam", "random"), seeds=(0,), layer="conv1",
                    transfer_from=None, jobs=1):
    """Full factorial sweep over models x pairs x modes x percents x seeds.

    ``models`` maps names to networks. Guided masks come from each model's own
    maps, or from ``transfer_from`` for every model when given. Guided rows do
    not depend on the seed but are repeated per seed to keep the table
    rectangular.
    """
    if not models or not pairs or not percents or not modes or not seeds:
        raise ValueError("occlusion_sweep needs nonempty models, pairs, percents, modes and seeds")
    unknown = set(modes) - set(MODES)
    if unknown:
        raise ValueError(f"unknown modes {sorted(unknown)}")
    if transfer_from is not None and transfer_from not in models:
        raise KeyError(f"transfer source {transfer_from!r} is not among the models")
    sources = [transfer_from] if transfer_from is not None else sorted(models)
    guided_maps = {}
    if any(m != "random" for m in modes):
        for src in sources:
            maps = {}
            for pair in pairs:
                try:
                    maps[pair.pair_id] = anchor_map(models[src], pair, layer)
                except LeamError:
                    maps[pair.pair_id] = np.zeros(pair.anchor.shape[1:])
            guided_maps[src] = (maps, identity_average_maps(maps, pairs))
    jobs_list = []
    for model_name in sorted(models):
        src = transfer_from if transfer_from is not None else model_name
        for pair in sorted(pairs, key=lambda q: q.pair_id):
            guided = {}
            if src in guided_maps:
                per_pair, per_identity = guided_maps[src]
                guided = {"leam": per_pair[pair.pair_id],
                          "leam-identity": per_identity.get(pair.identity, per_pair[pair.pair_id])}
            jobs_list.append((model_name, models[model_name], pair, guided, list(percents), list(modes),
                              list(seeds), layer, src))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_pair, jobs_list))
    else:
        chunks = [_sweep_pair(j) for j in jobs_list]
    outcomes = [o for chunk in chunks for o in chunk]
    return sorted(outcomes, key=OcclusionOutcome.sort_key)


def fmt_float(x):
    return f"{x:.6g}"


def outcomes_to_csv(outcomes):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OUTCOME_COLUMNS)
    for o in outcomes:
        row = []
        for value in astuple(o):
            row.append(fmt_float(value) if isinstance(value, float) else value)
        writer.writerow(row)
    return buf.getvalue()
