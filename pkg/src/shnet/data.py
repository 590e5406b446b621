"""Deterministic synthetic referring-segmentation scenes.

A scene is 2-5 hard-edged colored shapes on a noisy gray background; the
expression is drawn from a small template grammar covering attributes,
spatial relations, and ordinals. Scenes are rejection-sampled until exactly
one object satisfies the expression and no pair overlaps by more than 10%
of either area. The same seed always reproduces the same sample bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GenerationError

COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.20),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
}
SHAPES = ("circle", "square", "triangle")
ORDINALS = ("first", "second", "third")
SIZE_WORDS = ("small", "big")

# half-extent as a fraction of the image resolution, per size class; the
# classifier threshold sits in the gap between the two ranges
SMALL_RANGE = (0.055, 0.09)
BIG_RANGE = (0.125, 0.18)
SIZE_THRESHOLD = 0.1075

BACKGROUND_MEAN = 0.5
BACKGROUND_STD = 0.05
MAX_OVERLAP = 0.10
MAX_ATTEMPTS = 1000

TEMPLATE_NAMES = (
    "the <color> <shape>",
    "the <shape> left of the <shape>",
    "the <ordinal> <shape> from the left",
    "the <size> <color> <shape>",
    "the <color> <shape> above the <color> <shape>",
)


@dataclass
class SceneObject:
    shape: str
    color: str
    cx: float
    cy: float
    half: float

    @property
    def size_class(self):
        return "small" if self.half < SIZE_THRESHOLD * self._resolution else "big"

    _resolution: int = 64


@dataclass
class RefSample:
    image: np.ndarray          # 3 x R x R float64 in [0, 1]
    words: list
    mask: np.ndarray           # 1 x R x R float64 in {0, 1}
    meta: dict = field(default_factory=dict)


def grammar_vocabulary():
    words = {"the", "left", "of", "from", "above"}
    words.update(COLORS)
    words.update(SHAPES)
    words.update(ORDINALS)
    words.update(SIZE_WORDS)
    return sorted(words)


def all_combos():
    """Every (template_id, referent_color, referent_shape) the grammar can emit;
    color is empty for the templates that do not name one."""
    combos = []
    for color in COLORS:
        for shape in SHAPES:
            combos.append((0, color, shape))
    for shape in SHAPES:
        combos.append((1, "", shape))
        combos.append((2, "", shape))
    for color in COLORS:
        for shape in SHAPES:
            combos.append((3, color, shape))
            combos.append((4, color, shape))
    return combos


def split_combos(seed):
    """Partition the combo space into train and compositional-holdout sets."""
    rng = np.random.default_rng([seed, 0xC0B0])
    holdout_per_template = {0: 2, 1: 1, 2: 1, 3: 2, 4: 2}
    train, test = [], []
    for tid, count in holdout_per_template.items():
        group = [c for c in all_combos() if c[0] == tid]
        order = rng.permutation(len(group))
        held = {group[i] for i in order[:count]}
        test.extend(sorted(held))
        train.extend(sorted(set(group) - held))
    return sorted(train), sorted(test)


# ---------------------------------------------------------------------------
# rasterization


def rasterize(obj, resolution):
    """Hard boolean mask of one object, sampled at integer pixel centers."""
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    if obj.shape == "circle":
        return (xs - obj.cx) ** 2 + (ys - obj.cy) ** 2 <= obj.half ** 2
    if obj.shape == "square":
        return np.maximum(np.abs(xs - obj.cx), np.abs(ys - obj.cy)) <= obj.half
    if obj.shape == "triangle":
        ax, ay = obj.cx, obj.cy - obj.half
        bx, by = obj.cx - obj.half, obj.cy + obj.half
        cx_, cy_ = obj.cx + obj.half, obj.cy + obj.half
        d1 = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        d2 = (cx_ - bx) * (ys - by) - (cy_ - by) * (xs - bx)
        d3 = (ax - cx_) * (ys - cy_) - (ay - cy_) * (xs - cx_)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        return ~(neg & pos)
    raise DataError(f"unknown shape type {obj.shape!r}")


# ---------------------------------------------------------------------------
# template semantics (also used by the rejection sampler)


def satisfiers(template_id, args, objects):
    """Objects matching the expression; the scene is valid when exactly one does."""
    if template_id == 0:
        color, shape = args["color"], args["shape"]
        return [o for o in objects if o.color == color and o.shape == shape]
    if template_id == 1:
        s1, s2 = args["shape"], args["anchor_shape"]
        return [a for a in objects if a.shape == s1 and any(
            b is not a and b.shape == s2 and a.cx < b.cx for b in objects)]
    if template_id == 2:
        k, shape = args["rank"], args["shape"]
        matches = sorted((o for o in objects if o.shape == shape), key=lambda o: o.cx)
        return [matches[k - 1]] if len(matches) >= k else []
    if template_id == 3:
        size, color, shape = args["size"], args["color"], args["shape"]
        return [o for o in objects
                if o.size_class == size and o.color == color and o.shape == shape]
    if template_id == 4:
        c1, s1 = args["color"], args["shape"]
        c2, s2 = args["anchor_color"], args["anchor_shape"]
        return [a for a in objects if a.color == c1 and a.shape == s1 and any(
            b is not a and b.color == c2 and b.shape == s2 and a.cy < b.cy
            for b in objects)]
    raise DataError(f"unknown template id {template_id}")


def expression_words(template_id, args):
    if template_id == 0:
        return ["the", args["color"], args["shape"]]
    if template_id == 1:
        return ["the", args["shape"], "left", "of", "the", args["anchor_shape"]]
    if template_id == 2:
        return ["the", ORDINALS[args["rank"] - 1], args["shape"], "from", "the", "left"]
    if template_id == 3:
        return ["the", args["size"], args["color"], args["shape"]]
    if template_id == 4:
        return ["the", args["color"], args["shape"], "above",
                "the", args["anchor_color"], args["anchor_shape"]]
    raise DataError(f"unknown template id {template_id}")


# ---------------------------------------------------------------------------
# scene generation


def _draw_half(rng, resolution, size_class):
    lo, hi = SMALL_RANGE if size_class == "small" else BIG_RANGE
    return rng.uniform(lo * resolution, hi * resolution)


def _place(rng, resolution, half):
    margin = half + 2.0
    return (rng.uniform(margin, resolution - 1 - margin),
            rng.uniform(margin, resolution - 1 - margin))


def _draw_args(rng, combo):
    tid, color, shape = combo
    args = {"shape": shape}
    if tid in (0, 3, 4):
        args["color"] = color
    if tid == 1:
        args["anchor_shape"] = SHAPES[rng.integers(len(SHAPES))]
    if tid == 2:
        args["rank"] = int(rng.integers(1, len(ORDINALS) + 1))
    if tid == 3:
        args["size"] = SIZE_WORDS[rng.integers(len(SIZE_WORDS))]
    if tid == 4:
        args["anchor_color"] = list(COLORS)[rng.integers(len(COLORS))]
        args["anchor_shape"] = SHAPES[rng.integers(len(SHAPES))]
    return args


def _random_object(rng, resolution, shape=None, color=None, size_class=None):
    shape = shape or SHAPES[rng.integers(len(SHAPES))]
    color = color or list(COLORS)[rng.integers(len(COLORS))]
    size_class = size_class or SIZE_WORDS[rng.integers(len(SIZE_WORDS))]
    half = _draw_half(rng, resolution, size_class)
    cx, cy = _place(rng, resolution, half)
    obj = SceneObject(shape=shape, color=color, cx=cx, cy=cy, half=half)
    obj._resolution = resolution
    return obj


def _propose_scene(rng, resolution, combo, args, n_objects):
    tid, color, shape = combo
    objs = [_random_object(rng, resolution, shape=shape, color=color or None,
                           size_class=args.get("size"))]
    if tid == 1:
        objs.append(_random_object(rng, resolution, shape=args["anchor_shape"]))
    if tid == 4:
        objs.append(_random_object(rng, resolution, shape=args["anchor_shape"],
                                   color=args["anchor_color"]))
    if tid == 2:
        while len(objs) < args["rank"]:
            objs.append(_random_object(rng, resolution, shape=shape))
    while len(objs) < n_objects:
        objs.append(_random_object(rng, resolution))

    # nudge the geometry toward satisfying relational templates
    if tid == 1 and objs[0].cx >= objs[1].cx:
        objs[0].cx, objs[1].cx = objs[1].cx, objs[0].cx
    if tid == 4 and objs[0].cy >= objs[1].cy:
        objs[0].cy, objs[1].cy = objs[1].cy, objs[0].cy

    order = rng.permutation(len(objs))
    return [objs[i] for i in order]


def _scene_ok(objects, masks, template_id, args):
    areas = [int(m.sum()) for m in masks]
    if any(a == 0 for a in areas):
        return False
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            overlap = int(np.logical_and(masks[i], masks[j]).sum())
            if overlap > MAX_OVERLAP * min(areas[i], areas[j]):
                return False
    if template_id == 2:
        xs = [o.cx for o in objects if o.shape == args["shape"]]
        if len(set(xs)) != len(xs):
            return False
    return len(satisfiers(template_id, args, objects)) == 1


def generate(seed, resolution=64, n_objects_range=(2, 5), allowed_combos=None):
    """One seeded referring-segmentation problem. Same seed, same bits."""
    rng = np.random.default_rng(seed)
    combos = allowed_combos if allowed_combos is not None else all_combos()
    for _ in range(MAX_ATTEMPTS):
        combo = combos[rng.integers(len(combos))]
        args = _draw_args(rng, combo)
        lo, hi = n_objects_range
        n = int(rng.integers(lo, hi + 1))
        if combo[0] == 2:
            n = max(n, args["rank"])
        objects = _propose_scene(rng, resolution, combo, args, n)
        masks = [rasterize(o, resolution) for o in objects]
        if not _scene_ok(objects, masks, combo[0], args):
            continue
        referent = satisfiers(combo[0], args, objects)[0]
        ref_idx = next(k for k, o in enumerate(objects) if o is referent)

        image = rng.normal(BACKGROUND_MEAN, BACKGROUND_STD, size=(3, resolution, resolution))
        image = np.clip(image, 0.0, 1.0)
        for obj, m in zip(objects, masks):
            for ch, value in enumerate(COLORS[obj.color]):
                image[ch][m] = value
        mask = masks[ref_idx].astype(np.float64)[None]
        meta = {
            "objects": [{"type": o.shape, "color": o.color,
                         "center": [o.cx, o.cy], "size": o.half,
                         "size_class": o.size_class} for o in objects],
            "referent_index": ref_idx,
            "template_id": combo[0],
            "args": args,
            "seed": int(seed),
        }
        return RefSample(image=image, words=expression_words(combo[0], args),
                         mask=mask, meta=meta)
    raise GenerationError(
        f"seed {seed}: no valid scene in {MAX_ATTEMPTS} attempts; combo space too tight")


def sample_seed(root_seed, split, index):
    offset = {"train": 0, "test": 5_000_000}[split]
    return int(root_seed) * 10_000_000 + offset + index


# ---------------------------------------------------------------------------
# image file IO (PPM/PGM written natively; PNG read via Pillow)


def write_ppm(path, image):
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    data = data.transpose(1, 2, 0)  # HWC interleaved
    with open(path, "wb") as f:
        f.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_pgm(path, mask):
    data = (np.asarray(mask).reshape(mask.shape[-2], mask.shape[-1]) > 0.5)
    data = data.astype(np.uint8) * 255
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def _read_pnm_header(blob, path):
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PNM header") from exc
    return w, h, maxval, pos + 1


def read_image(path):
    """8-bit RGB image as 3 x H x W float64 scaled to [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] == b"P6":
        w, h, maxval, off = _read_pnm_header(blob, path)
        raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=off)
        return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
    raise DataError(f"{path}: unsupported image format (want PPM or PNG)")


def read_mask(path):
    """Binary mask as 1 x H x W float64 of {0, 1}."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"P5":
        raise DataError(f"{path}: unsupported mask format (want PGM)")
    w, h, maxval, off = _read_pnm_header(blob, path)
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=off)
    return (raw.reshape(h, w) > maxval // 2).astype(np.float64)[None]


# ---------------------------------------------------------------------------
# dataset splits and manifests


def write_embeddings_file(path, vocab_words, dim, seed):
    rng = np.random.default_rng([seed, 0xE4B])
    with open(path, "w") as f:
        for word in vocab_words:
            vec = rng.normal(0.0, 0.3, size=dim)
            f.write(word + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def generate_split(out_dir, seed, n_train, n_test, resolution=64, embed_dim=48):
    """Write train/test manifests plus images, masks, vocab and embeddings.

    The test split draws only from held-out (template, color, shape)
    combinations, so evaluation probes compositions never seen in training.
    """
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    train_combos, test_combos = split_combos(seed)
    manifests = {}
    for split, count, combos in (("train", n_train, train_combos),
                                 ("test", n_test, test_combos)):
        rows = []
        for i in range(count):
            sseed = sample_seed(seed, split, i)
            sample = generate(sseed, resolution=resolution, allowed_combos=combos)
            sid = f"{split}_{i:06d}"
            image_rel = f"images/{sid}.ppm"
            mask_rel = f"masks/{sid}.pgm"
            write_ppm(os.path.join(out_dir, image_rel), sample.image)
            write_pgm(os.path.join(out_dir, mask_rel), sample.mask)
            rows.append({"id": sid, "image_path": image_rel, "mask_path": mask_rel,
                         "expression": " ".join(sample.words),
                         "template_id": sample.meta["template_id"], "seed": sseed})
        manifest_path = os.path.join(out_dir, f"{split}.jsonl")
        with open(manifest_path, "w") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
        manifests[split] = manifest_path

    from .text import Vocabulary
    vocab = Vocabulary(grammar_vocabulary())
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    write_embeddings_file(os.path.join(out_dir, "embeddings.txt"),
                          grammar_vocabulary(), embed_dim, seed)
    return manifests


class RefDataset:
    """Manifest-backed dataset; images and masks are cached decoded in RAM."""

    def __init__(self, manifest_path):
        self.base = os.path.dirname(os.path.abspath(manifest_path))
        self.rows = []
        try:
            with open(manifest_path) as f:
                for lineno, line in enumerate(f, start=1):
                    if line.strip():
                        try:
                            self.rows.append(json.loads(line))
                        except json.JSONDecodeError as exc:
                            raise DataError(f"{manifest_path}:{lineno}: bad JSON ({exc})") from exc
        except OSError as exc:
            raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
        if not self.rows:
            raise DataError(f"{manifest_path}: empty manifest")
        self._cache = {}

    def __len__(self):
        return len(self.rows)

    def load(self, i):
        """(image 3xRxR, expression words, mask 1xRxR, manifest row)."""
        if i not in self._cache:
            row = self.rows[i]
            image = read_image(os.path.join(self.base, row["image_path"]))
            mask = read_mask(os.path.join(self.base, row["mask_path"]))
            self._cache[i] = (image, mask)
        image, mask = self._cache[i]
        row = self.rows[i]
        return image, row["expression"].split(), mask, row
