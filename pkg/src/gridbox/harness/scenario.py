"""Scenario files: a federation topology plus a scripted sequence of steps.

Format (JSON, ``"version": 1``)::

    {
      "version": 1,
      "name": "three_sites",
      "seed": 42,
      "nodes": [{"id": "NORTH", "vos": ["screening"]}, ...],
      "links": [{"a": "NORTH", "b": "SOUTH", "rate": 1250000, "rtt": 0.05}, ...],
      "users": {"radiologist": ["screening"]},
      "corpora": {"north": {"patients": 10, "id_prefix": "NORTH"}},
      "steps": [{"op": "ingest", "node": "NORTH", "corpus": "north", "user": "radiologist"}, ...]
    }

Step ops: ingest, store_bytes, sync, query, retrieve, resolve, annotate,
update_meta, add_event, partition, cut, heal, advance, run_transfers,
corrupt, assert. Any step may carry ``"expect_error": "<ErrorClass>"``.
Values saved with ``"save": name`` can be referenced later as
``[name, index]`` (row or entry index) in ``*_from`` fields.

Assertion checks: rows_equal_oracle, complete, status, converged, no_leaks,
count, pfn_local, pfn_remote, fileset_size, local_cases_first, vault_intact,
digest_unchanged.
"""
from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from gridbox.dicom import build_sr, parse_dicom, serialize_dicom
from gridbox.errors import AssertionFailed, GridBoxError
from gridbox.harness.corpus import SyntheticCorpusSpec, generate
from gridbox.harness.network import SimNetwork
from gridbox.harness.oracle import Oracle
from gridbox.mom import pseudonym_for, sr_from_assessment
from gridbox.mom.records import Assessment, Finding, to_dict
from gridbox.objectstore.pfn import Pfn

SCENARIO_VERSION = 1


@dataclass
class Scenario:
    name: str
    nodes: list
    links: list
    steps: list
    users: dict = field(default_factory=dict)
    corpora: dict = field(default_factory=dict)
    seed: int = 42
    federation_secret: str = "federation-secret"

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        if data.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
            raise ValueError(f"unsupported scenario version {data.get('version')!r}")
        return cls(
            name=data.get("name", "scenario"),
            nodes=list(data["nodes"]),
            links=list(data.get("links", [])),
            steps=list(data.get("steps", [])),
            users=dict(data.get("users", {})),
            corpora=dict(data.get("corpora", {})),
            seed=int(data.get("seed", 42)),
            federation_secret=data.get("federation_secret", "federation-secret"),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class StepResult:
    index: int
    op: str
    ok: bool
    detail: str = ""


@dataclass
class Report:
    name: str
    steps: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    dumps: dict = field(default_factory=dict)  # node -> sha256 of full catalogue dump
    audits: dict = field(default_factory=dict)  # node -> sha256 of audit log
    leaks: dict = field(default_factory=dict)

    @property
    def passed(self) -> int:
        return sum(1 for s in self.steps if s.op == "assert" and s.ok)

    @property
    def failed(self) -> list:
        return [s for s in self.steps if not s.ok]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "failed": [s.index for s in self.failed],
            "steps": [s.__dict__ for s in self.steps],
            "metrics": self.metrics,
            "dumps": self.dumps,
            "audits": self.audits,
            "leaks": self.leaks,
        }


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class Runner:
    def __init__(self, scenario: Scenario, workdir=None):
        self.s = scenario
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="gridbox-scn-"))
        self.net = SimNetwork(self.workdir, federation_secret=scenario.federation_secret)
        for link in scenario.links:
            self.net.add_link(link["a"], link["b"], float(link.get("rate", 1_250_000)), float(link.get("rtt", 0.05)))
        for spec in scenario.nodes:
            extra = {k: spec[k] for k in ("capacity", "low_water", "high_water", "query_timeout") if k in spec}
            self.net.declare(spec["id"], spec["vos"], **extra)
        self.net.start()
        self.tokens = {user: self.net.token(user, vos) for user, vos in sorted(scenario.users.items())}
        self.user_vos = {user: frozenset(vos) for user, vos in scenario.users.items()}
        self.oracle = Oracle()
        self.saved: dict = {}
        self.raw_identifiers: set[str] = set()
        self.metrics = {"sync_rounds": [], "query_latencies": [], "resolve_latencies": []}
        self._sr_counter = 0

    # ---------------------------------------------------------------- helpers

    def client(self, step):
        return self.net.client(step["node"], self.tokens[step["user"]])

    def ref(self, spec):
        """Resolve ``[name, index]`` or ``[name, index, field]`` against saved values."""
        name, index, *rest = spec
        value = self.saved[name]
        if hasattr(value, "rows"):
            value = value.rows
        item = value[index]
        if rest:
            key = rest[0]
            item = item[key] if isinstance(item, dict) else getattr(item, key)
        elif isinstance(item, dict) and "lfn" in item:
            item = item["lfn"]
        elif hasattr(item, "lfn"):
            item = item.lfn
        return item

    def _corpus_spec(self, name: str) -> SyntheticCorpusSpec:
        data = dict(self.s.corpora[name])
        data.setdefault("seed", self.s.seed + sum(map(ord, name)))
        data.setdefault("id_prefix", name.upper())
        return SyntheticCorpusSpec.from_dict(data)

    # ------------------------------------------------------------------ steps

    def op_ingest(self, step):
        node = self.net.nodes[step["node"]]
        spec = self._corpus_spec(step["corpus"])
        client = self.client(step)
        vo = step.get("vo") or node.config.default_vo
        images = generate(spec)
        if "limit" in step:
            images = images[: step["limit"]]
        clinical_done = set()
        lfns = []
        for img, blob in images:
            lfn = client.store(blob, vo)
            lfns.append(lfn)
            pid = pseudonym_for(node.config.node_secret, node.node_id, img.patient_id, img.patient_name)
            self.raw_identifiers.update({img.patient_id, img.patient_name})
            self.oracle.add_image(vo, lfn, node.node_id, pid, img)
            if step.get("clinical", True) and pid not in clinical_done:
                clinical_done.add(pid)
                updates = {f"clinical.{k}": v for k, v in sorted(img.clinical.items())}
                client.update_meta(pid, updates)
                self.oracle.update_meta(vo, pid, updates)
        self.saved[step.get("save", f"ingest:{step['node']}:{step['corpus']}")] = [{"lfn": x} for x in lfns]
        return f"{len(lfns)} files"

    def op_store_bytes(self, step):
        data = bytes.fromhex(step["hex"]) if "hex" in step else step.get("text", "").encode()
        return self.client(step).store(data)

    def op_sync(self, step):
        if step.get("until_quiet"):
            rounds = self.net.sync_until_quiet(int(step.get("max_rounds", 20)))
        else:
            rounds = int(step.get("rounds", 1))
            for _ in range(rounds):
                self.net.sync_round()
        self.metrics["sync_rounds"].append(rounds)
        return f"{rounds} rounds"

    def op_query(self, step):
        start = self.net.clock.now()
        result = self.client(step).query(step["query"])
        self.metrics["query_latencies"].append(round(self.net.clock.now() - start, 9))
        self.saved[step.get("save", "last")] = result
        return f"{len(result.rows)} rows complete={result.complete}"

    def op_retrieve(self, step):
        if "lfns" in step:
            lfns = list(step["lfns"])
        else:
            name = step["lfns_from"]
            value = self.saved[name]
            rows = value.rows if hasattr(value, "rows") else value
            lfns = [r["lfn"] if isinstance(r, dict) else r.lfn for r in rows][: step.get("limit")]
        entries = self.client(step).retrieve(lfns)
        self.saved[step.get("save", "last")] = entries
        return f"{len(entries)} entries"

    def op_resolve(self, step):
        lfn = step.get("lfn") or self.ref(step["lfn_from"])
        start = self.net.clock.now()
        result = self.client(step).resolve(lfn, bool(step.get("merged", False)))
        self.metrics["resolve_latencies"].append(round(self.net.clock.now() - start, 9))
        self.saved[step.get("save", "last")] = result
        return str(result if not isinstance(result, list) else [str(p) for p in result])

    def op_annotate(self, step):
        node = self.net.nodes[step["node"]]
        lfn = step.get("lfn") or self.ref(step["target_from"])
        entry = node.catalog.lfn_entry(lfn)
        fact = next(f for f in node.catalog.facts() if f["image.lfn"] == lfn)
        self._sr_counter += 1
        spec = dict(step.get("assessment", {}))
        findings = tuple(Finding(**f) for f in spec.pop("findings", []))
        assessment = Assessment(
            assessment_id=spec.pop("assessment_id", f"{self.s.name}-A{self._sr_counter}"),
            study_uid=fact["study.study_uid"],
            author=spec.pop("author", step["user"]),
            authored_at=spec.pop("authored_at", f"2005010{self._sr_counter % 10}T120000"),
            equipment=spec.pop("equipment", "workstation"),
            composition=spec.pop("composition", "SCATTERED"),
            findings=findings,
            **spec,
        )
        doc = sr_from_assessment(assessment, (entry.sop_uid,))
        sop_uid = f"{entry.sop_uid}.77.{self._sr_counter}"
        obj = build_sr(
            doc, sop_uid=sop_uid, study_uid=fact["study.study_uid"], series_uid=f"{fact['series.series_uid']}.77",
            patient_id=fact["patient.pseudonym_id"],
        )
        sr_lfn = self.client(step).store_sr(serialize_dicom(obj))
        self.oracle.add_assessment(entry.vo, to_dict(assessment))
        self.saved[step.get("save", "last")] = [{"lfn": sr_lfn}]
        return sr_lfn

    def op_update_meta(self, step):
        node = self.net.nodes[step["node"]]
        pid = step.get("patient") or self.ref(list(step["patient_from"]) + ["patient_id"])
        ack = self.client(step).update_meta(pid, step["updates"])
        for vo in node.catalog.patient_vos(pid):
            if vo in self.user_vos[step["user"]]:
                self.oracle.update_meta(vo, pid, step["updates"])
        return ",".join(ack["fields"])

    def op_add_event(self, step):
        node = self.net.nodes[step["node"]]
        pid = step.get("patient") or self.ref(list(step["patient_from"]) + ["patient_id"])
        event = {"patient_id": pid, **step["event"]}
        eid = self.client(step).add_event(event)
        vos = [vo for vo in node.catalog.patient_vos(pid) if vo in self.user_vos[step["user"]]]
        self.oracle.add_event(vos[0], pid, event["kind"])
        return eid

    def op_partition(self, step):
        self.net.partition(step["node"])
        return step["node"]

    def op_cut(self, step):
        self.net.cut_link(step["a"], step["b"])
        return f"{step['a']}-{step['b']}"

    def op_heal(self, step):
        self.net.heal()
        return "healed"

    def op_advance(self, step):
        return str(self.net.clock.advance(float(step["seconds"])))

    def op_run_transfers(self, step):
        return f"{self.net.run_transfers()} jobs"

    def op_corrupt(self, step):
        sop = step.get("sop_uid") or self.ref(step["lfn_from"]).rsplit("/", 1)[-1]
        self.net.corrupt.add(sop)
        return sop

    # ------------------------------------------------------------- assertions

    def op_assert(self, step):
        check = step["check"]
        fn = getattr(self, f"check_{check}", None)
        if fn is None:
            raise ValueError(f"unknown check {check!r}")
        ok, detail = fn(step)
        if not ok:
            raise AssertionError(detail)
        return detail

    def check_rows_equal_oracle(self, step):
        result = self.saved[step["result"]]
        query = step["query"] if "query" in step else None
        if query is None:
            query = next(s["query"] for s in self.s.steps if s.get("save") == step["result"] and s["op"] == "query")
        vos = self.user_vos[step["user"]]
        expected = self.oracle.select(query.get("predicate"), vos, step.get("origins"))
        got = sorted(set(result.lfns))
        missing, extra = sorted(set(expected) - set(got)), sorted(set(got) - set(expected))
        return not missing and not extra and len(got) == len(result.lfns), (
            f"expected {len(expected)} got {len(got)} missing={missing[:3]} extra={extra[:3]}"
        )

    def check_complete(self, step):
        result = self.saved[step["result"]]
        return result.complete == step["equals"], f"complete={result.complete}"

    def check_status(self, step):
        result = self.saved[step["result"]]
        got = result.status.get(step["node"])
        return got == step["equals"], f"{step['node']}={got}"

    def check_count(self, step):
        value = self.saved[step["result"]]
        n = len(value.rows) if hasattr(value, "rows") else len(value)
        return n == step["equals"], f"count={n}"

    def check_converged(self, step):
        vo_set = frozenset(step["vos"])
        members = [n for n, node in sorted(self.net.nodes.items()) if vo_set <= node.catalog.vo_set]
        dumps = {n: self.net.nodes[n].catalog.dump(vo_set) for n in members}
        return len(set(dumps.values())) == 1, f"{len(set(dumps.values()))} distinct dumps over {members}"

    def check_no_leaks(self, step):
        hits = {k: v for k, v in self.net.scan(sorted(self.raw_identifiers)).items() if v}
        return not hits, f"{len(self.raw_identifiers)} identifiers scanned, {len(hits)} found"

    def _pfn(self, step):
        value = self.saved[step["result"]]
        return value if isinstance(value, Pfn) else value[0]

    def check_pfn_local(self, step):
        pfn = self._pfn(step)
        return pfn.aetitle == step["node"], str(pfn)

    def check_pfn_remote(self, step):
        pfn = self._pfn(step)
        return pfn.aetitle != step["node"], str(pfn)

    def check_fileset_size(self, step):
        value = self.saved[step["result"]]
        return len(value) == step["equals"], f"{len(value)} PFNs"

    def check_local_cases_first(self, step):
        entries = self.saved[step["result"]]
        seen_nonlocal = False
        for entry in entries:
            if entry.case_eat_seconds > 0:
                seen_nonlocal = True
            elif seen_nonlocal:
                return False, f"local case after a non-local one at {entry.lfn}"
        return True, f"{len(entries)} entries ordered"

    def check_vault_intact(self, step):
        bad = {n: node.vault.verify_all() for n, node in self.net.nodes.items()}
        bad = {n: b for n, b in bad.items() if b}
        return not bad, f"corrupt entries: {bad}"

    def check_digest_unchanged(self, step):
        node = self.net.nodes[step["node"]]
        lfn = step.get("lfn") or self.ref(step["lfn_from"])
        stored = node.vault.get(lfn)
        entry = node.catalog.lfn_entry(lfn)
        data = node.vault.read(lfn)
        ok = stored.content_digest == entry.content_digest == hashlib.sha256(data).hexdigest()
        parse_dicom(data)
        return ok, stored.content_digest[:16]

    # -------------------------------------------------------------------- run

    def run(self, strict: bool = False) -> Report:
        report = Report(self.s.name)
        for index, step in enumerate(self.s.steps):
            op = step["op"]
            handler = getattr(self, f"op_{op}", None)
            if handler is None:
                raise ValueError(f"step {index}: unknown op {op!r}")
            expect = step.get("expect_error")
            try:
                detail = handler(step)
                ok = expect is None
                if expect is not None:
                    detail = f"expected {expect}, call succeeded"
            except AssertionError as exc:
                ok, detail = False, str(exc)
            except GridBoxError as exc:
                ok = expect == exc.code
                detail = f"{exc.code}: {exc}"
            report.steps.append(StepResult(index, op, ok, str(detail)))
            if not ok and strict:
                raise AssertionFailed(index, str(detail))
        report.metrics = {
            **self.metrics,
            "transfers": {f"{a}->{b}": n for (a, b), n in sorted(self.net.stats.transfers.items())},
            "bytes_moved": self.net.stats.bytes_moved,
            "inter_node_requests": self.net.stats.requests,
            "sim_time": round(self.net.clock.now() - 1_000_000_000.0, 9),
        }
        report.dumps = {n: _sha(node.catalog.dump()) for n, node in sorted(self.net.nodes.items())}
        report.audits = {n: _sha(node.audit.text()) for n, node in sorted(self.net.nodes.items())}
        report.leaks = {k: v for k, v in self.net.scan(sorted(self.raw_identifiers)).items() if v}
        return report

    def close(self) -> None:
        shutil.rmtree(self.workdir, ignore_errors=True)


def run_scenario(scenario: Scenario, workdir=None, strict: bool = True, keep: bool = False) -> Report:
    """Run ``scenario`` in a fresh in-process federation.

    With ``strict`` the first failed step raises :class:`AssertionFailed`
    carrying its index; otherwise failures are listed in the report.
    """
    runner = Runner(scenario, workdir)
    try:
        return runner.run(strict)
    finally:
        if not keep:
            runner.close()
