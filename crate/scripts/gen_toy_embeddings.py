"""Writes the bundled toy word-vector table (GloVe text format).

Each token is a category centroid plus a small per-token offset, so words of
the same kind (tableware, furniture, people, ...) sit close together. The
synonym targets of the indoor map are placed right next to their sources.

    python3 scripts/gen_toy_embeddings.py > crates/core/data/toy_embeddings.txt
"""

import random

DIM = 8
CENTROID_SCALE = 1.0
TOKEN_SPREAD = 0.35
SYNONYM_SPREAD = 0.08

CATEGORIES = {
    "tableware": ["plate", "cup", "glass", "bowl", "fork", "knife", "spoon", "napkin", "bottle"],
    "food": ["bread", "cake", "fruit", "pizza", "salad"],
    "furniture": ["table", "chair", "bench", "rug"],
    "people": ["person", "man", "woman", "child", "boy", "girl"],
    "electronics": ["laptop", "phone"],
    "decor": ["lamp", "painting", "clock", "vase", "candle"],
    "structure": ["wall", "floor", "window", "door"],
    "animal": ["horse", "dog", "cat"],
    "vehicle": ["car", "bicycle"],
    "spatial": ["on", "in", "near", "next", "to", "beside", "behind", "front", "of",
                "by", "facing", "left", "right", "under", "above"],
    "action": ["sitting", "hanging", "has", "holding", "using"],
}

SYNONYMS = {"table": "surface", "chair": "stool", "laptop": "notebook", "plate": "dish"}


def main():
    rng = random.Random(20240611)
    vectors = {}
    for name, words in CATEGORIES.items():
        centroid = [rng.gauss(0.0, CENTROID_SCALE) for _ in range(DIM)]
        for w in words:
            vectors[w] = [c + rng.gauss(0.0, TOKEN_SPREAD) for c in centroid]
    for src, dst in SYNONYMS.items():
        vectors[dst] = [v + rng.gauss(0.0, SYNONYM_SPREAD) for v in vectors[src]]
    for w in sorted(vectors):
        print(w, " ".join(f"{v:.6f}" for v in vectors[w]))


if __name__ == "__main__":
    main()
