#!/usr/bin/env python3
"""Regenerates the bundled fixtures under fixtures/.

Output is deterministic: every random choice comes from a seeded RNG.

  fixtures/dataset/train.jsonl        32,651 concept sets (25,020/4,240/3,391 by size)
  fixtures/dataset/dev_o.jsonl        993 concept sets (493/250/250), 3 references each
  fixtures/dataset/showcase.jsonl     hand-written concept sets used by the offline
                                      retrieval and caption fixtures
  fixtures/captions/dev_o.jsonl       10 captions per dev_o concept set
  fixtures/generations/*.jsonl        outputs of two toy systems for dev_o
  fixtures/offline/search/*.txt       search results per query
  fixtures/offline/images/...         image bodies by host/path
  fixtures/offline/captions.jsonl     captions for the showcase images
"""

import io
import json
import random
from pathlib import Path

from PIL import Image

ROOT = Path(__file__).resolve().parent.parent / "fixtures"

NOUNS = """
apple bag ball balloon banana basket beach bear bed bench bicycle bird blanket board boat book
bottle bowl box bread bridge brush bucket building bus cake camera candle car card carpet cart
castle cat chair cheese city clock cloud coat computer cookie couch cow crowd cup desk dog door
dress drum duck egg elephant engine fence field fish flag floor flower fork fountain frisbee
garden gate giraffe glass goat grass guitar hair hammer hand hat hill horse hose house ice
jacket kettle key kitchen kite knife ladder lake lamp laptop leaf lemon letter lion map market
microphone mirror money monkey mountain mouse mug nest net ocean onion orange oven paint pan
paper park pen pencil phone piano picture pig pillow pizza plate pool pot puppy rabbit racket
rain river road rock roof rope sand sandwich scarf sheep shelf shirt shoe sink skateboard ski
sky snow sofa soup spoon stage star station stone street sun surfboard table tent tie tiger
toast towel tower toy track train tree truck umbrella van vase wagon wall watch water wave
wheel window wine wood yard zebra rider surfer skier pet
""".split()

VERBS = """
bake bark build carry catch chase chop clean climb cook cross cut dance dig dive drink drive
eat fall feed fill fish fly fold grow hang hit hold hug jump kick kneel knit laugh lay lean lift
listen look mix mow open paint park pick plant play pour pull push race read ride roll row run
sail score serve sew shake shine shoot sing sit skate sleep slide smile spin splash stand stir
swim swing talk throw tie walk wash watch wave wear whisk write
""".split()

FILLERS = """
a an the on in with of near some while and is are at by next to under over their small large
young old red blue green white black man woman person people group child girl boy
""".split()


def vocabulary():
    words = sorted(set(NOUNS) | set(VERBS))
    bad = [w for w in words if w in FILLERS or w.endswith("s") or w.endswith("ie")]
    words = [w for w in words if w not in bad]
    # A filler must never be a concept or its plural.
    assert not {f for f in FILLERS if f in words or (f.endswith("s") and f[:-1] in words)}
    return words


def surface(word, rng):
    """Base form or plural; both stem to the same string for this vocabulary."""
    return word + "s" if rng.random() < 0.3 else word


def sentence(concepts, rng):
    words = []
    for c in rng.sample(concepts, len(concepts)):
        words.extend(rng.sample(FILLERS, rng.randint(0, 2)))
        words.append(surface(c, rng))
    words.extend(rng.sample(FILLERS, rng.randint(0, 2)))
    return " ".join(words)


def concept_sets(rng, vocab, counts):
    """counts: {size: n}. Sizes are interleaved in a random order."""
    sizes = [k for k, n in counts.items() for _ in range(n)]
    rng.shuffle(sizes)
    return [rng.sample(vocab, k) for k in sizes]


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, separators=(",", ":")) + "\n")


def make_train(vocab):
    rng = random.Random(11)
    sets = concept_sets(rng, vocab, {3: 25020, 4: 4240, 5: 3391})
    rows = [
        {"id": f"train-{i:05d}", "concepts": cs, "references": [sentence(cs, rng)], "split": "train"}
        for i, cs in enumerate(sets, 1)
    ]
    write_jsonl(ROOT / "dataset" / "train.jsonl", rows)


def make_dev(vocab):
    rng = random.Random(23)
    sets = concept_sets(rng, vocab, {3: 493, 4: 250, 5: 250})
    rows = [
        {
            "id": f"dev-{i:04d}",
            "concepts": cs,
            "references": [sentence(cs, rng) for _ in range(3)],
            "split": "dev_o",
        }
        for i, cs in enumerate(sets, 1)
    ]
    write_jsonl(ROOT / "dataset" / "dev_o.jsonl", rows)
    return rows


# Probability that the caption at search rank r mentions a given concept.
# Earlier results are more on-topic, as with a real search engine.
def mention_probability(rank):
    return 0.45 * 0.88 ** (rank - 1)


def make_captions(dev_rows):
    rng = random.Random(37)
    rows = []
    for row in dev_rows:
        concepts = row["concepts"]
        for rank in range(1, 11):
            p = mention_probability(rank)
            mentioned = [c for c in concepts if rng.random() < p]
            words = rng.sample(FILLERS, rng.randint(3, 6))
            for c in mentioned:
                words.insert(rng.randint(0, len(words)), surface(c, rng))
            rows.append({"concept_set_id": row["id"], "source_rank": rank, "text": " ".join(words)})
    write_jsonl(ROOT / "captions" / "dev_o.jsonl", rows)
    return rows


def check_curve(dev_rows, captions):
    """Aggregate coverage curve with exact-token matching, printed for review."""
    by_id = {}
    for c in captions:
        by_id.setdefault(c["concept_set_id"], []).append(c)
    grid = [1, 2, 3, 5, 7, 10]
    totals = [0.0] * len(grid)
    for row in dev_rows:
        concepts = row["concepts"]

        def covered(text):
            toks = set(text.split())
            return {c for c in concepts if c in toks or c + "s" in toks}

        caps = sorted(by_id[row["id"]], key=lambda c: c["source_rank"])
        ranked = sorted(caps, key=lambda c: -len(covered(c["text"])))
        for i, n in enumerate(grid):
            union = set().union(*(covered(c["text"]) for c in ranked[:n]))
            totals[i] += len(union) / len(concepts)
    curve = [100 * t / len(dev_rows) for t in totals]
    print("aggregate coverage:", ", ".join(f"{n}:{v:.2f}" for n, v in zip(grid, curve)))
    gains = [(curve[i + 1] - curve[i]) / (grid[i + 1] - grid[i]) for i in range(len(grid) - 1)]
    print("gain per unit NTC:", ", ".join(f"{g:.3f}" for g in gains))
    assert all(g > 0 for g in gains)
    assert all(a > b for a, b in zip(gains[1:], gains[2:])), "gains after the knee must shrink"


def make_generations(dev_rows):
    rng = random.Random(41)
    strong, weak = [], []
    for row in dev_rows:
        concepts = row["concepts"]
        ref = row["references"][rng.randrange(3)].split()
        # Strong system: a reference with one word dropped, half the time.
        if len(ref) > 3 and rng.random() < 0.5:
            del ref[rng.randrange(len(ref))]
        strong.append({"id": row["id"], "output": " ".join(ref)})
        # Weak system: drops a concept and uses a random word order.
        kept = concepts[:-1] if rng.random() < 0.6 else concepts
        weak.append({"id": row["id"], "output": sentence(kept, rng)})
    write_jsonl(ROOT / "generations" / "system_a.jsonl", strong)
    write_jsonl(ROOT / "generations" / "system_b.jsonl", weak)


SHOWCASE = [
    ("show-umbrella", ["stand", "hold", "umbrella", "street"]),
    ("show-bird", ["food", "eat", "hand", "bird"]),
    ("show-cat", ["cat", "bed", "pet", "lay"]),
    ("show-fence", ["fence", "jump", "horse", "rider"]),
    ("show-surf", ["wave", "fall", "board", "surfer"]),
    ("show-dance", ["dance", "stage", "front", "crowd"]),
    # No search results are bundled for this one.
    ("show-missing", ["goat", "roof", "climb"]),
]

# (url suffix, kind, caption). kind: png/jpeg/gif, "junk" for a body that is
# not an image, None for URLs the extension filter drops.
SHOWCASE_RESULTS = {
    "show-umbrella": [
        ("umbrella/1.jpg", "jpeg", "a girl holding a pink umbrella in a city"),
        ("umbrella/2.jpg", "jpeg", "a woman walking down a street holding an umbrella"),
        ("umbrella/gallery.html", None, None),
        ("umbrella/4.png", "png", "a man holding an umbrella in a city"),
        ("umbrella/5.jpg?w=640", None, None),
        ("umbrella/6.JPEG", "jpeg", "a woman walking down a street holding an umbrella"),
        ("umbrella/7.gif", "gif", "a group of people standing under a umbrella"),
        ("umbrella/8.png", "junk", None),
    ],
    "show-bird": [("bird/1.jpg", "jpeg", "a person holding a small bird in their hand")],
    "show-cat": [("cat/1.png", "png", "a cat laying on a bed with a stuffed animal")],
    "show-fence": [("fence/1.jpg", "jpeg", "a horse is jumping over a wooden fence")],
    "show-surf": [
        ("surf/1.jpg", "jpeg", "a surfer riding a wave on a surfboard"),
        ("surf/2.gif", "gif", "a man riding a wave on top of a surfboard"),
    ],
    "show-dance": [
        ("dance/1.jpg", "jpeg", "a crowd of people watching a man on a stage"),
        ("dance/2.png", "png", "a man is holding a microphone in front of a crowd"),
    ],
}

HOST = "img.example.org"


def image_bytes(kind, seed):
    if kind == "junk":
        return b"<html><body>not an image</body></html>\n"
    img = Image.new("RGB", (4 + seed % 5, 3 + seed % 4), ((seed * 53) % 256, (seed * 97) % 256, 80))
    buf = io.BytesIO()
    img.save(buf, format={"jpeg": "JPEG", "png": "PNG", "gif": "GIF"}[kind])
    return buf.getvalue()


def make_showcase():
    rows = [
        {"id": cid, "concepts": cs, "references": [" ".join(cs)], "split": "test_cg"}
        for cid, cs in SHOWCASE
    ]
    write_jsonl(ROOT / "dataset" / "showcase.jsonl", rows)
    offline = ROOT / "offline"
    captions = []
    seed = 0
    for cid, cs in SHOWCASE:
        results = SHOWCASE_RESULTS.get(cid)
        if results is None:
            continue
        urls = []
        for rank, (suffix, kind, caption) in enumerate(results, 1):
            url = f"https://{HOST}/{suffix}"
            urls.append(url)
            if kind is None:
                continue
            path = offline / "images" / HOST / suffix
            path.parent.mkdir(parents=True, exist_ok=True)
            seed += 1
            path.write_bytes(image_bytes(kind, seed))
            if caption is not None:
                captions.append({"concept_set_id": cid, "source_rank": rank, "text": caption})
        search = offline / "search" / ("+".join(cs) + ".txt")
        search.parent.mkdir(parents=True, exist_ok=True)
        search.write_text("\n".join(urls) + "\n", encoding="utf-8")
    write_jsonl(offline / "captions.jsonl", captions)


def main():
    vocab = vocabulary()
    make_train(vocab)
    dev_rows = make_dev(vocab)
    captions = make_captions(dev_rows)
    check_curve(dev_rows, captions)
    make_generations(dev_rows)
    make_showcase()


if __name__ == "__main__":
    main()
