"""Writes the tabular golden fixture and its expected serializations.

The expected text is computed here independently of the C++ code:
one "The <column> is <value>." clause per non-blank cell, numeric cells
rendered with the shortest round-trip decimal and their unit appended.
"""
import csv
import json
import random
import sys
from pathlib import Path

COLUMNS = [
    ("Histologic Type", None, None),
    ("Histologic Grade", None, None),
    ("Age", "numeric", "years"),
    ("Tumor Size", "numeric", "cm"),
    ("Stage", None, None),
    ("Marker Level", "numeric", None),
]
TYPES = ["Adenocarcinoma", "Squamous cell carcinoma", "Mucinous carcinoma", "Carcinoid"]
GRADES = ["Well differentiated", "Moderately differentiated", "Poorly differentiated"]
STAGES = ["IA", "IB", "IIA, with nodes", "III \"advanced\""]


def shortest(x: float) -> str:
    s = repr(x)
    return s[:-2] if s.endswith(".0") else s


def serialize(row):
    clauses = []
    for name, kind, unit in COLUMNS:
        raw = row[name]
        if raw.strip() == "":
            continue
        value = shortest(float(raw)) if kind == "numeric" else raw.strip()
        if unit:
            value += " " + unit
        clauses.append(f"The {name} is {value}.")
    return " ".join(clauses)


def main(out: Path):
    rng = random.Random(20240611)
    rows = []
    for i in range(20):
        row = {
            "id": f"row-{i + 1:02}",
            "Histologic Type": rng.choice(TYPES),
            "Histologic Grade": rng.choice(GRADES),
            "Age": str(rng.randint(18, 90)) if rng.random() > 0.1 else "",
            "Tumor Size": rng.choice(["2.5", "0.75", "10", "3.125", "1e1", "12.0", "0.001", " 4.2 "]),
            "Stage": rng.choice(STAGES) if rng.random() > 0.15 else "  ",
            "Marker Level": rng.choice(["-1.5", "1000000", "0.1", "7", "+3.25", ""]),
            "label": str(rng.randint(0, 1)),
        }
        rows.append(row)
    header = ["id"] + [c[0] for c in COLUMNS] + ["label"]
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    schema = {
        "columns": [{"name": "id"}]
        + [{"name": n, **({"kind": k} if k else {}), **({"unit": u} if u else {})} for n, k, u in COLUMNS]
        + [{"name": "label"}],
        "label_column": "label",
        "id_column": "id",
        "modalities": {"tabular": [c[0] for c in COLUMNS]},
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    with open(out / "expected.txt", "w") as f:
        for row in rows:
            f.write(serialize(row) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]))
