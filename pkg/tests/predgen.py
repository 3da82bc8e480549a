"""Seeded random predicate documents over the query schema."""
import random

DOMAINS = {
    "patient.sex": ("enum", ["F", "M", "O", "UNKNOWN"]),
    "patient.birth_year": ("int", (1924, 1966)),
    "patient.age_at_study": ("int", (38, 78)),
    "patient.origin_node": ("str", ["A", "B", "C", "NORTH", "SOUTH", "HUB"]),
    "study.study_date": ("date", None),
    "study.description": ("str", ["SCREENING MAMMOGRAPHY", "SCREEN", "MAMMO", "DIAGNOSTIC"]),
    "series.modality": ("str", ["MG", "CT", "M"]),
    "series.manufacturer": ("str", ["ACME Imaging", "Mammo Systems", "Radiant Medical", "Med", "ACME"]),
    "image.laterality": ("str", ["L", "R"]),
    "image.view_position": ("str", ["CC", "MLO", "C"]),
    "image.rows": ("int", (8, 32)),
    "clinical.hrt_treatment": ("bool", None),
    "clinical.diet_class": ("enum", ["MEDITERRANEAN", "WESTERN", "VEGETARIAN", "OTHER"]),
    "clinical.lifestyle_class": ("enum", ["SEDENTARY", "ACTIVE", "VERY_ACTIVE"]),
    "clinical.disease_status": ("enum", ["HEALTHY", "BENIGN", "MALIGNANT", "UNDER_INVESTIGATION"]),
    "assessment.composition": ("enum", ["FATTY", "SCATTERED", "HETEROGENEOUSLY_DENSE", "EXTREMELY_DENSE"]),
    "assessment.category": ("int", (0, 5)),
    "assessment.finding_type": ("enum", ["MASS", "CALCIFICATION", "DISTORTION", "ASYMMETRY"]),
    "assessment.finding_laterality": ("enum", ["L", "R"]),
    "assessment.quadrant": ("enum", ["UOQ", "UIQ", "LOQ", "LIQ", "CENTRAL", "AXILLARY"]),
    "event.kind": ("enum", ["VISIT", "INTERPRETATION", "DRUG_TREATMENT", "PROCEDURE", "DIAGNOSIS"]),
}
COMPARE = ["EQ", "NE", "LT", "LE", "GT", "GE", "BETWEEN"]


def _value(rng, kind, domain):
    if kind == "int":
        return rng.randint(*domain)
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "date":
        return f"{rng.randint(2001, 2005)}{rng.randint(1, 12):02d}{rng.randint(1, 28):02d}"
    return rng.choice(domain)


def random_leaf(rng: random.Random) -> dict:
    path = rng.choice(sorted(DOMAINS))
    kind, domain = DOMAINS[path]
    if rng.random() < 0.08:
        return {"path": path, "op": "EXISTS", "operands": []}
    if kind == "bool":
        ops = ["EQ", "NE"]
    elif kind == "int":
        ops = COMPARE
    else:
        ops = COMPARE + ["CONTAINS"]
    op = rng.choice(ops)
    if op == "BETWEEN":
        a, b = sorted([_value(rng, kind, domain), _value(rng, kind, domain)])
        return {"path": path, "op": op, "operands": [a, b]}
    return {"path": path, "op": op, "operands": [_value(rng, kind, domain)]}


def random_predicate(rng: random.Random, depth: int = 4) -> dict:
    """A predicate document of depth at most ``depth`` (a leaf has depth 1)."""
    if depth <= 1 or rng.random() < 0.3:
        return random_leaf(rng)
    choice = rng.random()
    if choice < 0.2:
        return {"not": random_predicate(rng, depth - 1)}
    key = "and" if choice < 0.6 else "or"
    return {key: [random_predicate(rng, depth - 1) for _ in range(rng.randrange(0, 4))]}
