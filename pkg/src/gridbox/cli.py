"""Workstation command line for a grid-box node, plus harness utilities.

Client commands talk to a running node (``--endpoint host:port``) with a
federation token (``--token`` or ``GRIDBOX_TOKEN``)::

    gridbox store <file>
    gridbox query <query-doc.json>
    gridbox retrieve <lfn> [<lfn> ...]
    gridbox resolve <lfn> [--merged]
    gridbox annotate <sr-file>
    gridbox update-meta <pseudonym-id> key=value [key=value ...]
    gridbox add-event <event.json>

Local commands::

    gridbox serve --config node.ini
    gridbox gen-corpus <out-dir> [--patients N --images N --seed S --prefix P]
    gridbox run-scenario <scenario.json> [--report out.json]
    gridbox make-token --subject alice --vo screening [--secret S | --secret-file F]
    gridbox make-sr <assessment.json> --ref <sop_uid> --study <uid> --series <uid> --patient <id> -o <file>

Exit codes:

    0   success
    1   other node error
    2   usage error
    3   Unauthorized (VO gate)
    4   node or peer unreachable
    5   InvalidToken
    10  DICOM error (NotDicom, NotStructuredReport, ...)
    11  model error (UnmappableSr, DuplicateAssessment, ...)
    12  catalogue error (UnknownPatient, FieldNotUpdatable, DanglingReference, ...)
    13  object store error (UnknownLfn, FetchFailed, DigestMismatch, ...)
    14  query error (UnknownAttribute, InvalidQuery)
    20  scenario assertion failed
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from gridbox.errors import GridBoxError

log = logging.getLogger("gridbox")


def _emit(args, records, summary: str = "") -> None:
    if args.output == "records":
        for record in records:
            print(json.dumps(record, sort_keys=True))
    else:
        for record in records:
            if isinstance(record, dict):
                print("  ".join(f"{k}={v}" for k, v in record.items()))
            else:
                print(record)
        if summary:
            print(summary)


def _usage(message: str):
    print(f"usage error: {message}", file=sys.stderr)
    raise SystemExit(2)


def _client(args):
    from gridbox.service.http import http_api_client

    endpoint = args.endpoint or os.environ.get("GRIDBOX_ENDPOINT")
    token = args.token or os.environ.get("GRIDBOX_TOKEN")
    if not endpoint:
        _usage("no endpoint: pass --endpoint or set GRIDBOX_ENDPOINT")
    if token and os.path.isfile(token):
        token = Path(token).read_text().strip()
    return http_api_client(endpoint, token or "")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


# ------------------------------------------------------------ client commands


def cmd_store(args):
    lfn = _client(args).store(Path(args.file).read_bytes(), args.vo)
    _emit(args, [{"lfn": lfn}], "stored")


def cmd_query(args):
    doc = json.loads(sys.stdin.read() if args.query == "-" else Path(args.query).read_text())
    if args.scope:
        doc["scope"] = args.scope
    result = _client(args).query(doc)
    records = [{"lfn": r["lfn"]} for r in result.rows] if args.lfns_only else result.rows
    _emit(args, records, f"{len(result.rows)} rows; status {result.status}; complete={result.complete}")
    if args.output == "records":
        print(json.dumps({"status": result.status, "complete": result.complete}, sort_keys=True), file=sys.stderr)


def cmd_retrieve(args):
    entries = _client(args).retrieve(args.lfns)
    _emit(args, [asdict(e) for e in entries], f"{len(entries)} files, prefetch started for non-local ones")


def cmd_resolve(args):
    result = _client(args).resolve(args.lfn, args.merged)
    pfns = result if isinstance(result, list) else [result]
    _emit(args, [{"pfn": str(p)} for p in pfns])


def cmd_annotate(args):
    lfn = _client(args).store_sr(Path(args.file).read_bytes())
    _emit(args, [{"lfn": lfn}], "assessment stored")


def cmd_update_meta(args):
    updates = {}
    for item in args.updates:
        key, sep, value = item.partition("=")
        if not sep:
            _usage(f"expected key=value, got {item!r}")
        updates[key] = _parse_value(value)
    ack = _client(args).update_meta(args.pid, updates)
    _emit(args, [ack])


def cmd_add_event(args):
    event = json.loads(Path(args.file).read_text())
    _emit(args, [{"event_id": _client(args).add_event(event)}])


# ------------------------------------------------------------- local commands


def cmd_serve(args):
    from gridbox.service import GridBox, load_config
    from gridbox.service.http import NodeServer

    config = load_config(args.config)
    node = GridBox(config)
    server = NodeServer(node)
    if not args.no_sync and config.peers:
        node.start_sync_loop()
    print(f"{config.node_id} listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()


def cmd_gen_corpus(args):
    from gridbox.harness.corpus import SyntheticCorpusSpec, gen_corpus

    spec = SyntheticCorpusSpec(
        patients=args.patients, studies_per_patient=args.studies, images_per_series=args.images,
        seed=args.seed, id_prefix=args.prefix, age_min=args.age_min, age_max=args.age_max,
    )
    manifest = gen_corpus(spec, args.out_dir)
    count = sum(1 for _ in open(manifest))
    _emit(args, [{"manifest": str(manifest), "files": count}])


def cmd_run_scenario(args):
    from gridbox.harness.scenario import Scenario, run_scenario

    report = run_scenario(Scenario.load(args.scenario), workdir=args.workdir, strict=False, keep=args.keep)
    data = report.to_json()
    if args.report:
        Path(args.report).write_text(json.dumps(data, indent=1, sort_keys=True))
    _emit(args, [{"step": s.index, "op": s.op, "ok": s.ok, "detail": s.detail} for s in report.steps],
          f"{report.passed} assertions passed, {len(report.failed)} steps failed; metrics {report.metrics}")
    if report.failed:
        first = report.failed[0]
        print(f"AssertionFailed: step {first.index}: {first.detail}", file=sys.stderr)
        return 20
    return 0


def cmd_make_token(args):
    from gridbox.clock import SystemClock
    from gridbox.service.auth import issue_token

    secret = Path(args.secret_file).read_text().strip() if args.secret_file else args.secret
    token = issue_token(secret, args.subject, args.vo, SystemClock().now(), args.ttl)
    print(token.encode())


def cmd_make_sr(args):
    from gridbox.dicom import build_sr, serialize_dicom
    from gridbox.mom import sr_from_assessment
    from gridbox.mom.records import record_from_dict

    data = json.loads(Path(args.assessment).read_text())
    data.setdefault("study_uid", args.study)
    assessment = record_from_dict("assessment", data)
    doc = sr_from_assessment(assessment, tuple(args.ref))
    obj = build_sr(
        doc, sop_uid=args.sop_uid or f"{args.ref[0]}.77.1", study_uid=args.study,
        series_uid=args.series, patient_id=args.patient,
    )
    Path(args.out).write_bytes(serialize_dicom(obj))
    _emit(args, [{"file": args.out}])


# ----------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridbox", description="Grid-box node and workstation tools")
    p.add_argument("--endpoint", help="node address host:port (or GRIDBOX_ENDPOINT)")
    p.add_argument("--token", help="federation token or a file holding one (or GRIDBOX_TOKEN)")
    p.add_argument("--output", choices=("records", "pretty"), default="records")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("store", help="store a DICOM file")
    s.add_argument("file")
    s.add_argument("--vo")
    s.set_defaults(fn=cmd_store)

    s = sub.add_parser("query", help="run a query document")
    s.add_argument("query", help="query document path, or - for stdin")
    s.add_argument("--scope", choices=("LOCAL_ONLY", "FEDERATED"))
    s.add_argument("--lfns-only", action="store_true")
    s.set_defaults(fn=cmd_query)

    s = sub.add_parser("retrieve", help="order LFNs by estimated access time and prefetch")
    s.add_argument("lfns", nargs="+")
    s.set_defaults(fn=cmd_retrieve)

    s = sub.add_parser("resolve", help="resolve an LFN to a PFN (blocks while fetching)")
    s.add_argument("lfn")
    s.add_argument("--merged", action="store_true", help="merged fileset with current metadata and SRs")
    s.set_defaults(fn=cmd_resolve)

    s = sub.add_parser("annotate", help="store a structured report")
    s.add_argument("file")
    s.set_defaults(fn=cmd_annotate)

    s = sub.add_parser("update-meta", help="update patient metadata")
    s.add_argument("pid")
    s.add_argument("updates", nargs="+", metavar="key=value")
    s.set_defaults(fn=cmd_update_meta)

    s = sub.add_parser("add-event", help="record a medical event")
    s.add_argument("file")
    s.set_defaults(fn=cmd_add_event)

    s = sub.add_parser("serve", help="run a node daemon")
    s.add_argument("--config", required=True)
    s.add_argument("--no-sync", action="store_true")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("gen-corpus", help="write a synthetic corpus and manifest")
    s.add_argument("out_dir")
    s.add_argument("--patients", type=int, default=30)
    s.add_argument("--studies", type=int, default=1)
    s.add_argument("--images", type=int, default=2)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--prefix", default="GB1")
    s.add_argument("--age-min", type=int, default=40)
    s.add_argument("--age-max", type=int, default=75)
    s.set_defaults(fn=cmd_gen_corpus)

    s = sub.add_parser("run-scenario", help="run a scenario in the in-process harness")
    s.add_argument("scenario")
    s.add_argument("--report")
    s.add_argument("--workdir")
    s.add_argument("--keep", action="store_true")
    s.set_defaults(fn=cmd_run_scenario)

    s = sub.add_parser("make-token", help="issue a federation token")
    s.add_argument("--subject", required=True)
    s.add_argument("--vo", action="append", required=True)
    s.add_argument("--secret", default="federation-secret")
    s.add_argument("--secret-file")
    s.add_argument("--ttl", type=float, default=3600.0)
    s.set_defaults(fn=cmd_make_token)

    s = sub.add_parser("make-sr", help="encode an assessment JSON as a structured report")
    s.add_argument("assessment")
    s.add_argument("--ref", action="append", required=True, help="referenced SOP instance UID")
    s.add_argument("--study", required=True)
    s.add_argument("--series", required=True)
    s.add_argument("--patient", required=True)
    s.add_argument("--sop-uid")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(fn=cmd_make_sr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args) or 0
    except GridBoxError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
