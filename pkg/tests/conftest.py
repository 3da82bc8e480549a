import pytest
from hypothesis import HealthCheck, settings

from gridbox.clock import SimClock
from gridbox.harness.corpus import SyntheticCorpusSpec, generate
from gridbox.objectstore.runner import DeferredRunner
from gridbox.service import GridBox, NodeConfig, issue_token

settings.register_profile(
    "gridbox", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("gridbox")

SECRET = "federation-secret"


@pytest.fixture
def clock():
    return SimClock()


@pytest.fixture(scope="session")
def corpus42():
    """The default seed-42 corpus: 30 patients, 60 images."""
    return generate(SyntheticCorpusSpec())


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SyntheticCorpusSpec(patients=4, id_prefix="SM", seed=7))


def make_token(clock, vos, subject="alice", ttl=3600.0):
    return issue_token(SECRET, subject, vos, clock.now(), ttl).encode()


@pytest.fixture
def make_node(tmp_path, clock):
    """Factory for a standalone node on the simulated clock."""

    def factory(node_id="GB1", vos=("mammo",), **extra):
        config = NodeConfig(
            node_id=node_id, vos=tuple(vos), vault_root=str(tmp_path / node_id), host=f"{node_id.lower()}.test",
            port=104, federation_secret=SECRET, node_secret=f"secret-{node_id}", **extra,
        )
        node = GridBox(config, clock=clock, runner=DeferredRunner(), links={})
        node.engine.parallel = False
        return node

    return factory


@pytest.fixture
def token(clock):
    return make_token(clock, ["mammo"])


# -------------------------------------------------------- acceptance report

ACCEPTANCE: list = []  # (number, title, passed, seconds, budget)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds, budget in sorted(ACCEPTANCE):
        limit = f" (budget {budget:.0f} s)" if budget else ""
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number}. {title}  {seconds:.2f} s{limit}")
