#!/usr/bin/env python3
"""Reference JSON-lines detector for protocol tests.

Emits one detection per image (box = central half, objectness = mean pixel
value, 3 class scores) — a deterministic pure function of the pixels.
FAKE_DETECTOR_MODE=garbage|error switches on failure behaviors.
"""

import base64
import json
import os
import sys


def handle(line: str, mode: str) -> str:
    if mode == "garbage":
        return "this is not json"
    try:
        req = json.loads(line)
        w, h = req["width"], req["height"]
        raw = base64.b64decode(req["pixels"])
        if len(raw) != w * h * 3:
            return json.dumps({"id": req.get("id"), "error": "bad pixel payload length"})
        if mode == "error":
            return json.dumps({"id": req["id"], "error": "synthetic backend failure"})
        mean = sum(raw) / len(raw) / 255.0 if raw else 0.0
        dets = []
        if mean > 0.01:
            dets.append(
                {
                    "box": [w * 0.25, h * 0.25, w * 0.75, h * 0.75],
                    "objectness": mean,
                    "scores": [0.6 * mean, 0.3 * mean, 0.1 * mean],
                }
            )
        return json.dumps({"id": req["id"], "detections": dets})
    except Exception as e:  # malformed request
        return json.dumps({"id": None, "error": str(e)})


def main() -> None:
    mode = os.environ.get("FAKE_DETECTOR_MODE", "ok")
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        print(handle(line, mode), flush=True)


if __name__ == "__main__":
    main()
