#!/usr/bin/env python3
"""Runs `steer serve` on a scratch model and validates live responses against the API schema.

usage: check_api_schema.py STEER_BINARY SCHEMA_FILE
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema
import requests


def main() -> int:
    steer, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)

    def check(def_name, instance):
        sub = {"$ref": f"#/$defs/{def_name}", "$defs": schema["$defs"]}
        jsonschema.validate(instance, sub, cls=jsonschema.Draft202012Validator)

    work = Path(tempfile.mkdtemp(prefix="steer-schema-"))
    cfg, weights, hub = work / "m.cfg", work / "m.bin", work / "h.hub"
    pairs = work / "pairs.jsonl"
    pairs.write_text(
        json.dumps({"positive": "I feel great", "negative": "I feel awful", "trait": "Warmth"}) + "\n"
        + json.dumps({"positive": "So kind", "negative": "So cold", "trait": "Warmth"}) + "\n"
    )
    subprocess.run([steer, "model", "init", "--config", cfg, "--weights", weights, "--layers", "2",
                    "--hidden", "16", "--heads", "2", "--vocab-size", "257", "--seed", "4"],
                   check=True, stdout=subprocess.DEVNULL)

    proc = subprocess.Popen([steer, "serve", "--model", cfg, "--weights", weights, "--hub", hub,
                             "--port", "0"], stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("listening on "), line
        base = line[len("listening on "):]
        checked = 0

        r = requests.get(f"{base}/health", timeout=10)
        check("Health", r.json()); checked += 1

        r = requests.get(f"{base}/traits", timeout=10)
        assert r.json() == [], r.text
        check("TraitList", r.json()); checked += 1

        subprocess.run([steer, "extract", "--model", cfg, "--weights", weights, "--hub", hub,
                        "--pairs", pairs, "--layers", "0,1"], check=True, stdout=subprocess.DEVNULL)
        r = requests.get(f"{base}/traits", timeout=10)
        assert [t["trait"] for t in r.json()] == ["Warmth"], r.text
        check("TraitList", r.json()); checked += 1

        r = requests.post(f"{base}/sessions", timeout=10)
        assert r.status_code == 201
        check("SessionCreated", r.json()); checked += 1
        sid = r.json()["session_id"]

        body = [{"trait": "Warmth", "gamma": 1.5}, {"trait": "Warmth", "layers": [1], "gamma": -0.5}]
        check("PlanRequest", body)
        r = requests.put(f"{base}/sessions/{sid}/plan", json=body, timeout=10)
        assert r.status_code == 200, r.text
        check("PlanResponse", r.json()); checked += 1

        r = requests.put(f"{base}/sessions/{sid}/plan", json=[{"trait": "Nope", "gamma": 1}], timeout=10)
        assert r.status_code == 422 and r.json()["trait"] == "Nope", r.text
        check("Error", r.json()); checked += 1

        msg = {"text": "hello there", "max_new": 12}
        check("MessageRequest", msg)
        r = requests.post(f"{base}/sessions/{sid}/messages", json=msg, stream=True, timeout=30)
        assert r.headers["Content-Type"].startswith("text/event-stream")
        events = []
        for raw in r.iter_lines():
            if raw.startswith(b"data: "):
                ev = json.loads(raw[6:].decode("utf-8"))
                check("StreamEvent", ev); checked += 1
                events.append(ev)
        assert events and events[-1] == {"done": True}, events
        assert sum(1 for e in events if e.get("i") is not None) == 12

        r = requests.get(f"{base}/sessions/{sid}", timeout=10)
        check("Session", r.json()); checked += 1
        assert len(r.json()["transcript"]) == 2

        r = requests.get(f"{base}/sessions/00000000-0000-0000-0000-000000000000", timeout=10)
        assert r.status_code == 404
        check("Error", r.json()); checked += 1

        print(f"{checked} responses and events match {schema_path}")
        return 0
    finally:
        proc.terminate()
        proc.wait(timeout=10)


if __name__ == "__main__":
    sys.exit(main())
