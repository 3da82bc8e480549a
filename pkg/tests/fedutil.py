"""Small builders for in-process federations used across test modules."""
from gridbox.harness.scenario import Runner, Scenario

HRT_OVER_50 = {"and": [
    {"path": "patient.age_at_study", "op": "GT", "operands": [50]},
    {"path": "clinical.hrt_treatment", "op": "EQ", "operands": [True]},
]}
AGED_50_TO_55 = {"path": "patient.age_at_study", "op": "BETWEEN", "operands": [50, 55]}


def federation(workdir, nodes, links=(), users=None, corpora=None, seed=42, **node_extra):
    """A started :class:`Runner`; ``nodes`` maps node id to its VO list."""
    scenario = Scenario(
        name="t",
        nodes=[{"id": n, "vos": list(v), **node_extra} for n, v in nodes.items()],
        links=[{"a": a, "b": b, "rate": 1_250_000, "rtt": 0.05} for a, b in links],
        steps=[],
        users=users or {"u": sorted({vo for v in nodes.values() for vo in v})},
        corpora=corpora or {},
        seed=seed,
    )
    return Runner(scenario, workdir)


def line(workdir, ids=("A", "B", "C"), vo="v", patients=15, **extra):
    """Line topology with a disjoint corpus ingested at every node."""
    nodes = {n: [vo] for n in ids}
    corpora = {n.lower(): {"patients": patients, "id_prefix": f"{n}X", "seed": 100 + i} for i, n in enumerate(ids)}
    runner = federation(workdir, nodes, list(zip(ids, ids[1:])), {"u": [vo]}, corpora, **extra)
    for n in ids:
        runner.op_ingest({"node": n, "corpus": n.lower(), "user": "u", "save": f"ingest:{n}"})
    return runner
