from gridbox.harness.corpus import CorpusImage, SyntheticCorpusSpec, gen_corpus, generate, read_manifest
from gridbox.harness.network import SimNetwork
from gridbox.harness.oracle import Oracle, holds
from gridbox.harness.scenario import Report, Scenario, run_scenario

__all__ = [
    "CorpusImage",
    "SyntheticCorpusSpec",
    "gen_corpus",
    "generate",
    "read_manifest",
    "SimNetwork",
    "Oracle",
    "holds",
    "Report",
    "Scenario",
    "run_scenario",
]
