"""Start the three nodes in configs/, load a corpus at each end and query from the hub.

    python3 scripts/demo_federation.py [--keep]

Everything goes through the ``gridbox`` command line, the same way an
operator would drive it. State lands in var/ (removed afterwards unless
--keep is given).
"""
import argparse
import json
import os
import secrets
import shutil
import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
VAR = ROOT / "var"
NODES = {"NORTH": 8701, "HUB": 8702, "SOUTH": 8703}


def gridbox(*args, env, check=True):
    proc = subprocess.run([sys.executable, "-m", "gridbox.cli", *args], env=env, capture_output=True, text=True)
    if check and proc.returncode:
        sys.exit(f"gridbox {' '.join(args)} failed ({proc.returncode}): {proc.stderr.strip()}")
    return [json.loads(line) for line in proc.stdout.splitlines() if line.startswith("{")]


def wait_ready(port, deadline=15.0):
    import urllib.request

    end = time.time() + deadline
    while time.time() < end:
        try:
            with urllib.request.urlopen(f"http://127.0.0.1:{port}/health", timeout=1):
                return
        except OSError:
            time.sleep(0.2)
    sys.exit(f"node on port {port} did not come up")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--keep", action="store_true", help="keep var/ afterwards")
    parser.add_argument("--patients", type=int, default=5)
    args = parser.parse_args()

    env = dict(os.environ, GRIDBOX_FEDERATION_SECRET=secrets.token_hex(16), PYTHONUNBUFFERED="1")
    for name in NODES:
        env[f"GRIDBOX_{name}_SECRET"] = secrets.token_hex(16)
    shutil.rmtree(VAR, ignore_errors=True)
    VAR.mkdir()
    procs = [
        subprocess.Popen([sys.executable, "-m", "gridbox.cli", "serve", "--config", str(CONFIGS / f"{n.lower()}.ini")],
                         env=env, stdout=subprocess.DEVNULL)
        for n in NODES
    ]
    try:
        for port in NODES.values():
            wait_ready(port)
        token = subprocess.run(
            [sys.executable, "-m", "gridbox.cli", "make-token", "--subject", "demo", "--vo", "screening",
             "--secret", env["GRIDBOX_FEDERATION_SECRET"]],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.strip()
        env["GRIDBOX_TOKEN"] = token

        for i, site in enumerate(("NORTH", "SOUTH")):
            out = VAR / f"corpus-{site.lower()}"
            gridbox("gen-corpus", str(out), "--patients", str(args.patients), "--prefix", site, "--seed", str(i),
                    env=env)
            files = sorted(out.glob("*.dcm"))
            for f in files:
                gridbox("--endpoint", f"127.0.0.1:{NODES[site]}", "store", str(f), env=env)
            print(f"{site}: stored {len(files)} files")

        query = VAR / "hrt.json"
        query.write_text(json.dumps({"predicate": {"and": [
            {"path": "patient.age_at_study", "op": "GT", "operands": [50]},
            {"path": "clinical.hrt_treatment", "op": "EQ", "operands": [True]},
        ]}}))
        hub = f"127.0.0.1:{NODES['HUB']}"
        federated = VAR / "all.json"
        federated.write_text(json.dumps({"scope": "FEDERATED"}))
        rows = gridbox("--endpoint", hub, "query", str(federated), "--lfns-only", env=env)
        print(f"HUB federated query before replication: {len(rows)} images")
        time.sleep(3)  # a few sync intervals
        rows = gridbox("--endpoint", hub, "query", str(federated), "--lfns-only", env=env)
        full = VAR / "full.json"
        full.write_text(json.dumps({"projection": "FULL_ROWS"}))
        over_50 = sorted({r["patient.pseudonym_id"] for r in gridbox("--endpoint", hub, "query", str(full), env=env)
                          if (r.get("patient.age_at_study") or 0) > 50})
        for pid in over_50[::2]:  # every other patient over 50 starts HRT
            gridbox("--endpoint", hub, "update-meta", pid, "clinical.hrt_treatment=true", env=env)
        local = gridbox("--endpoint", hub, "query", str(query), "--lfns-only", env=env)
        print(f"HUB catalogue after replication: {len(rows)} images, {len(local)} match 'over 50 on HRT'")
        if rows:
            lfn = rows[0]["lfn"]
            first = gridbox("--endpoint", hub, "resolve", lfn, env=env)[0]["pfn"]
            time.sleep(1)
            second = gridbox("--endpoint", hub, "resolve", lfn, env=env)[0]["pfn"]
            print(f"resolve {lfn}\n  first:  {first}\n  later:  {second}")
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            p.wait(10)
        if not args.keep:
            shutil.rmtree(VAR, ignore_errors=True)


if __name__ == "__main__":
    main()
