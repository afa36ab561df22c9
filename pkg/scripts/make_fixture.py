"""Regenerate the bundled synthetic review fixture.

Each review opens with a short verdict sentence drawn from a small verdict
vocabulary; that sentence is also the gold summary. The remaining sentences
describe details with a disjoint vocabulary, so relevance is learnable from
content alone.

    python scripts/make_fixture.py [--out src/mpsum/data/fixture.jsonl] [--n 40]
"""
import argparse
import json
import random
from pathlib import Path

PRODUCTS = ["coffee", "kettle", "blender", "headphones", "backpack", "lamp", "charger",
            "toaster", "notebook", "jacket"]
VERDICT_OPENERS = ["overall", "honestly", "simply", "truly", "really"]
VERDICT_ADJ = ["great", "excellent", "terrible", "awful", "fantastic", "disappointing",
               "superb", "mediocre"]
VERDICT_TAIL = ["value", "purchase", "product", "buy", "choice"]
VERDICT_CLOSERS = ["highly recommended", "would recommend", "five stars", "never again",
                   "worth every penny", "total regret"]
DETAIL_SUBJECTS = ["the box", "shipping", "the color", "my neighbor", "the manual", "delivery",
                   "the seller", "the package", "my cousin", "the store"]
DETAIL_VERBS = ["arrived", "came", "looked", "seemed", "showed", "was"]
DETAIL_TAILS = ["on tuesday morning", "with one small dent", "in blue paper", "after two weeks",
                "near the door", "without any tape", "late in the evening",
                "with extra stickers", "in plastic bags", "before lunch time"]
PUNCT = [".", "!", "."]


def verdict(rng, product):
    return (f"{rng.choice(VERDICT_OPENERS).capitalize()} {rng.choice(VERDICT_ADJ)} "
            f"{product}, {rng.choice(VERDICT_ADJ)} {rng.choice(VERDICT_TAIL)}, "
            f"{rng.choice(VERDICT_CLOSERS)}{rng.choice(PUNCT)}")


def detail(rng):
    return (f"{rng.choice(DETAIL_SUBJECTS).capitalize()} {rng.choice(DETAIL_VERBS)} "
            f"{rng.choice(DETAIL_TAILS)}{rng.choice(PUNCT)}")


def make(n, seed):
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        product = rng.choice(PRODUCTS)
        first = verdict(rng, product)
        rest = [detail(rng) for _ in range(rng.randint(3, 5))]
        rows.append({"review_id": f"r{i:03d}", "text": " ".join([first] + rest),
                     "summary": first})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1]
                    / "src/mpsum/data/fixture.jsonl")
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in make(args.n, args.seed):
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {args.n} reviews to {args.out}")


if __name__ == "__main__":
    main()
