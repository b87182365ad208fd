"""Writes the golden dump files with Python's struct module, independently of
the C++ encoder. Run from this directory: python3 make_golden.py"""

import struct

IMAGE, TEXT = 0, 1
HAS_WORD_VECS, HAS_REF_PRED = 1, 2


def dump(dim, flags, word_dim, classes, records):
    out = b"EMPD" + struct.pack("<IIQIII", 1, dim, len(records), len(classes), flags, word_dim)
    for class_id, name, word_vec in classes:
        raw = name.encode("utf-8")
        out += struct.pack("<II", class_id, len(raw)) + raw
        out += struct.pack("<%df" % len(word_vec), *word_vec)
    for modality, class_id, vector, ref_pred in records:
        out += struct.pack("<BI", modality, class_id)
        out += struct.pack("<%df" % dim, *vector)
        if flags & HAS_REF_PRED:
            out += struct.pack("<I", ref_pred)
    return out


# Three records, d = 4, two classes with 2-d word vectors, reference predictions.
golden = dump(
    4,
    HAS_WORD_VECS | HAS_REF_PRED,
    2,
    [(0, "cat", [0.5, -1.0]), (1, "dog", [2.0, 0.25])],
    [
        (IMAGE, 0, [1.0, -0.5, 0.25, 2.0], 0),
        (IMAGE, 1, [-3.0, 0.125, 4.0, -0.75], 1),
        (TEXT, 1, [0.0, 1.5, -2.5, 8.0], 1),
    ],
)

# Six classes, one text and one image each; every image is its text plus the
# same offset. All values are dyadic so the f32 sums are exact.
offset = [0.5, -0.25, 1.0]
texts = [
    [1.0, 0.0, 0.0],
    [0.0, 2.0, 0.0],
    [0.0, 0.0, -1.5],
    [1.125, 0.0, 0.0],
    [0.0, 1.75, 0.5],
    [-2.0, 0.5, 0.25],
]
classes = [(c, "class_%d" % c, []) for c in range(len(texts))]
records = [(TEXT, c, t, 0) for c, t in enumerate(texts)]
records += [(IMAGE, c, [t[i] + offset[i] for i in range(3)], 0) for c, t in enumerate(texts)]
constant_gap = dump(3, 0, 0, classes, records)

with open("golden_d4.empd", "wb") as f:
    f.write(golden)
with open("constant_gap.empd", "wb") as f:
    f.write(constant_gap)
