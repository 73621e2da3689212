"""Writes the 6x6, K=3 unary fixture and its expected probabilities.

Rules, with label 0 = background and label k = instance k:
  salient, covered by one instance  -> that label 1
  salient, uncovered                -> 1/K on every instance label
  salient, covered by k > 1         -> 1/k on each covering label
  non-salient, covered by k >= 1    -> 1/(k+1) on each covering label and background
  non-salient, uncovered            -> background 1
"""
import json
from fractions import Fraction

SALIENT = [
    "1111..",
    "1111..",
    "111111",
    "111111",
    "..1111",
    "......",
]
INSTANCES = [
    [
        "111...",
        "111...",
        "111...",
        "......",
        "......",
        "......",
    ],
    [
        "..111.",
        "..111.",
        "..111.",
        "..111.",
        "......",
        "......",
    ],
    [
        "......",
        "......",
        "...111",
        "...111",
        "...111",
        "...111",
    ],
]


def grid(rows):
    return [[c == "1" for c in r] for r in rows]


def pgm(path, rows):
    with open(path, "wb") as f:
        f.write(b"P5\n6 6\n255\n")
        f.write(bytes(255 if c else 0 for r in rows for c in r))


sal = grid(SALIENT)
inst = [grid(m) for m in INSTANCES]
K = len(inst)
probs = []
rules = {}
for y in range(6):
    for x in range(6):
        cover = [k + 1 for k in range(K) if inst[k][y][x]]
        p = [Fraction(0)] * (K + 1)
        if sal[y][x] and len(cover) == 1:
            rule = "single"
            p[cover[0]] = Fraction(1)
        elif sal[y][x] and not cover:
            rule = "uncovered_salient"
            for l in range(1, K + 1):
                p[l] = Fraction(1, K)
        elif sal[y][x]:
            rule = "overlap"
            for l in cover:
                p[l] = Fraction(1, len(cover))
        elif cover:
            rule = "background_covered"
            p[0] = Fraction(1, len(cover) + 1)
            for l in cover:
                p[l] = Fraction(1, len(cover) + 1)
        else:
            rule = "background"
            p[0] = Fraction(1)
        rules[rule] = rules.get(rule, 0) + 1
        probs.append([float(v) for v in p])

pgm("salient.pgm", sal)
for k, m in enumerate(inst):
    pgm(f"instance_{k + 1}.pgm", m)
with open("golden.json", "w") as f:
    json.dump({"height": 6, "width": 6, "labels": K + 1, "rule_counts": rules, "probabilities": probs}, f, indent=1)
    f.write("\n")
print(rules)
