"""The detector boundary: everything the engine knows about a model is
"image in, list of detection vectors out".

Three backends ship here:

* synthetic blob detectors — deterministic oracles whose evidence region is
  known ground truth, used by the test suite and benchmarks;
* a subprocess backend speaking line-delimited JSON over stdin/stdout
  (request ``{"id", "width", "height", "pixels"}`` with pixels a base64
  row-major 8-bit RGB buffer; response ``{"id", "detections": [{"box":
  [x1, y1, x2, y2], "objectness", "scores": [...]}]}``);
* a TCP backend with byte-identical payloads over a socket.

Detectors are treated as deterministic functions of pixel content. A handle
is owned by one worker at a time; synthetic handles are pure functions and
safe to share.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .core import BBox, DetectionVector

__all__ = [
    "BackendError",
    "ProposalSet",
    "DetectorHandle",
    "FunctionDetector",
    "BlobSpec",
    "BlobDetector",
    "make_blob_detector",
    "make_randomized_detector",
    "CountingDetector",
    "SubprocessDetector",
    "TcpDetector",
    "create_detector",
    "filter_proposals",
    "encode_request",
    "decode_response",
]

DEFAULT_SCORE_FLOOR = 0.05
DEFAULT_BATCH_SIZE = 32


class BackendError(RuntimeError):
    """A detector backend failed; ``index`` is the offending batch position."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ProposalSet:
    """All surviving proposals of a detector for one image (possibly empty)."""

    proposals: tuple[DetectionVector, ...] = ()

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    def __getitem__(self, i: int) -> DetectionVector:
        return self.proposals[i]


def filter_proposals(proposals, floor: float = DEFAULT_SCORE_FLOOR) -> ProposalSet:
    """Drop proposals whose confidence (objectness x best class score) falls
    below ``floor``; masked images produce junk that would otherwise bloat
    protocol traffic."""
    return ProposalSet(tuple(p for p in proposals if p.score >= floor))


class DetectorHandle:
    """Base class for detector backends."""

    class_count: int | None = None
    class_names: tuple[str, ...] | None = None

    def detect(self, img: np.ndarray) -> ProposalSet:
        raise NotImplementedError

    def detect_batch(self, imgs) -> list[ProposalSet]:
        if len(imgs) == 0:
            raise ValueError("detect_batch requires a non-empty list")
        out = []
        for j, img in enumerate(imgs):
            try:
                out.append(self.detect(img))
            except BackendError as e:
                raise BackendError(f"image {j} in batch: {e}", index=j) from e
        return out

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class FunctionDetector(DetectorHandle):
    """Adapter turning any pure function image -> ProposalSet into a handle."""

    def __init__(self, fn, class_count: int | None = None, class_names=None):
        self._fn = fn
        self.class_count = class_count
        self.class_names = tuple(class_names) if class_names else None

    def detect(self, img: np.ndarray) -> ProposalSet:
        return self._fn(img)

    def detect_batch(self, imgs) -> list[ProposalSet]:
        if len(imgs) == 0:
            raise ValueError("detect_batch requires a non-empty list")
        return [self._fn(img) for img in imgs]


def _region_brightness(img: np.ndarray, region: BBox) -> float:
    """Mean pixel value (over channels) inside a box, 0 for empty regions."""
    h, w = img.shape[:2]
    y0 = max(int(round(region.y1)), 0)
    y1 = min(int(round(region.y2)), h)
    x0 = max(int(round(region.x1)), 0)
    x1 = min(int(round(region.x2)), w)
    if y0 >= y1 or x0 >= x1:
        return 0.0
    return float(np.clip(img[y0:y1, x0:x1, :].mean(), 0.0, 1.0))


@dataclass(frozen=True)
class BlobSpec:
    """One synthetic detection: the box to emit, the evidence region whose
    brightness drives the response (defaults to the box itself), and the
    class-score profile."""

    box: BBox
    class_profile: np.ndarray
    evidence: BBox | None = None

    def __post_init__(self):
        profile = np.asarray(self.class_profile, dtype=np.float64)
        if profile.ndim != 1 or profile.size == 0:
            raise ValueError("class_profile must be a non-empty vector")
        if profile.min() < 0.0 or profile.max() > 1.0:
            raise ValueError("class_profile values must lie in [0, 1]")
        profile.flags.writeable = False
        object.__setattr__(self, "class_profile", profile)

    @property
    def evidence_region(self) -> BBox:
        return self.evidence if self.evidence is not None else self.box


class BlobDetector(DetectorHandle):
    """Deterministic synthetic detector for tests and benchmarks.

    For each configured blob it emits one proposal at the configured box with
    objectness equal to the mean brightness of the image inside the evidence
    region, and class scores equal to the profile scaled by that brightness.
    Proposals under the score floor are suppressed.
    """

    def __init__(self, specs, score_floor: float = DEFAULT_SCORE_FLOOR, class_names=None):
        specs = tuple(specs)
        if not specs:
            raise ValueError("need at least one blob spec")
        sizes = {s.class_profile.size for s in specs}
        if len(sizes) != 1:
            raise ValueError("all blob specs must share the class count")
        self.specs = specs
        self.score_floor = score_floor
        self.class_count = specs[0].class_profile.size
        self.class_names = tuple(class_names) if class_names else None

    def detect(self, img: np.ndarray) -> ProposalSet:
        proposals = []
        for spec in self.specs:
            brightness = _region_brightness(img, spec.evidence_region)
            det = DetectionVector(
                box=spec.box,
                objectness=brightness,
                class_scores=spec.class_profile * brightness,
            )
            proposals.append(det)
        return filter_proposals(proposals, self.score_floor)


def make_blob_detector(specs, score_floor: float = DEFAULT_SCORE_FLOOR, class_names=None) -> BlobDetector:
    """Build a synthetic blob detector from one spec or a sequence of them."""
    if isinstance(specs, BlobSpec):
        specs = [specs]
    return BlobDetector(specs, score_floor=score_floor, class_names=class_names)


class _ShiftedInputDetector(DetectorHandle):
    """Wraps a handle so its responses depend on a different region of the
    original image: the input is cyclically rolled by roughly half its extent
    (seeded jitter) before being passed through. A black-box stand-in for
    re-randomizing model weights."""

    def __init__(self, base: DetectorHandle, seed: int):
        self._base = base
        self.class_count = base.class_count
        self.class_names = base.class_names
        key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(0x5A17)], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        self._fy = 0.5 + (rng.random() - 0.5) / 4.0
        self._fx = 0.5 + (rng.random() - 0.5) / 4.0

    def shift_for(self, shape) -> tuple[int, int]:
        h, w = shape[:2]
        return int(self._fy * h), int(self._fx * w)

    def detect(self, img: np.ndarray) -> ProposalSet:
        dy, dx = self.shift_for(img.shape)
        return self._base.detect(np.roll(img, (dy, dx), axis=(0, 1)))

    def close(self) -> None:
        self._base.close()


def make_randomized_detector(base: DetectorHandle, seed: int) -> DetectorHandle:
    """A deterministic detector that attends to different image regions than
    ``base`` — used by sanity checks that expect the explanation to move."""
    return _ShiftedInputDetector(base, seed)


class CountingDetector(DetectorHandle):
    """Transparent wrapper counting how many images pass through."""

    def __init__(self, base: DetectorHandle):
        self._base = base
        self.class_count = base.class_count
        self.class_names = base.class_names
        self.calls = 0

    def detect(self, img: np.ndarray) -> ProposalSet:
        self.calls += 1
        return self._base.detect(img)

    def detect_batch(self, imgs) -> list[ProposalSet]:
        self.calls += len(imgs)
        return self._base.detect_batch(imgs)

    def close(self) -> None:
        self._base.close()


# --- wire protocol -----------------------------------------------------------

def encode_request(req_id: int, img: np.ndarray) -> str:
    """Encode one request line. Pixels travel as base64 row-major 8-bit RGB."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    rgb8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    payload = base64.b64encode(rgb8.tobytes()).decode("ascii")
    return json.dumps({"id": req_id, "width": w, "height": h, "pixels": payload})


def decode_response(line: str) -> tuple[int, list[DetectionVector]]:
    """Parse one response line into (id, detections); raises BackendError on
    protocol violations."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise BackendError(f"malformed response line: {e}") from e
    if "error" in msg:
        raise BackendError(f"backend reported error for id {msg.get('id')}: {msg['error']}")
    if "id" not in msg or "detections" not in msg:
        raise BackendError(f"response missing required fields: {line[:200]}")
    dets = []
    try:
        for d in msg["detections"]:
            x1, y1, x2, y2 = d["box"]
            dets.append(
                DetectionVector(
                    box=BBox(float(x1), float(y1), float(x2), float(y2)),
                    objectness=float(d["objectness"]),
                    class_scores=np.asarray(d["scores"], dtype=np.float64),
                )
            )
    except (KeyError, TypeError, ValueError) as e:
        raise BackendError(f"invalid detection record: {e}") from e
    return int(msg["id"]), dets


class _LineTransport:
    """Request/response pairing over any line-based duplex channel."""

    def __init__(self):
        self._next_id = 0

    def _send_line(self, line: str) -> None:
        raise NotImplementedError

    def _recv_line(self) -> str:
        raise NotImplementedError

    def round_trip(self, imgs, score_floor: float) -> list[ProposalSet]:
        ids = []
        for img in imgs:
            req_id = self._next_id
            self._next_id += 1
            self._send_line(encode_request(req_id, img))
            ids.append(req_id)
        by_id: dict[int, list[DetectionVector]] = {}
        for j in range(len(imgs)):
            try:
                line = self._recv_line()
            except BackendError as e:
                raise BackendError(f"image {j} in batch: {e}", index=j) from e
            resp_id, dets = decode_response(line)
            by_id[resp_id] = dets
        out = []
        for j, req_id in enumerate(ids):
            if req_id not in by_id:
                raise BackendError(f"no response for request id {req_id}", index=j)
            out.append(filter_proposals(by_id[req_id], score_floor))
        return out


class SubprocessDetector(DetectorHandle, _LineTransport):
    """Runs a detector as a child process speaking the JSON-lines protocol."""

    def __init__(
        self,
        command,
        class_count: int | None = None,
        class_names=None,
        score_floor: float = DEFAULT_SCORE_FLOOR,
        batch_size: int = DEFAULT_BATCH_SIZE,
    ):
        _LineTransport.__init__(self)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.class_count = class_count
        self.class_names = tuple(class_names) if class_names else None
        self.score_floor = score_floor
        self.batch_size = batch_size
        self._proc: subprocess.Popen | None = None

    def _ensure_started(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as e:
                raise BackendError(f"cannot start detector process {self.command!r}: {e}") from e

    def _send_line(self, line: str) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BackendError(f"detector process pipe closed: {e}") from e

    def _recv_line(self) -> str:
        assert self._proc is not None and self._proc.stdout is not None
        line = self._proc.stdout.readline()
        if line == "":
            code = self._proc.poll()
            raise BackendError(f"detector process closed its output (exit code {code})")
        return line

    def detect(self, img: np.ndarray) -> ProposalSet:
        return self.detect_batch([img])[0]

    def detect_batch(self, imgs) -> list[ProposalSet]:
        if len(imgs) == 0:
            raise ValueError("detect_batch requires a non-empty list")
        self._ensure_started()
        out: list[ProposalSet] = []
        for start in range(0, len(imgs), self.batch_size):
            chunk = imgs[start : start + self.batch_size]
            try:
                out.extend(self.round_trip(chunk, self.score_floor))
            except BackendError as e:
                idx = start + e.index if e.index is not None else None
                raise BackendError(str(e), index=idx) from e
            if self.class_count is None:
                for ps in out:
                    if len(ps):
                        self.class_count = ps[0].class_scores.size
                        break
        return out

    def close(self) -> None:
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None


class TcpDetector(DetectorHandle, _LineTransport):
    """Same protocol as the subprocess backend, carried over a TCP socket."""

    def __init__(
        self,
        host: str,
        port: int,
        class_count: int | None = None,
        class_names=None,
        score_floor: float = DEFAULT_SCORE_FLOOR,
        batch_size: int = DEFAULT_BATCH_SIZE,
    ):
        _LineTransport.__init__(self)
        self.host = host
        self.port = port
        self.class_count = class_count
        self.class_names = tuple(class_names) if class_names else None
        self.score_floor = score_floor
        self.batch_size = batch_size
        self._sock: socket.socket | None = None
        self._file = None

    def _ensure_connected(self):
        if self._sock is None:
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=30)
                self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            except OSError as e:
                raise BackendError(f"cannot connect to detector at {self.host}:{self.port}: {e}") from e

    def _send_line(self, line: str) -> None:
        try:
            self._file.write(line + "\n")
            self._file.flush()
        except OSError as e:
            raise BackendError(f"detector socket write failed: {e}") from e

    def _recv_line(self) -> str:
        try:
            line = self._file.readline()
        except OSError as e:
            raise BackendError(f"detector socket read failed: {e}") from e
        if line == "":
            raise BackendError("detector closed the connection")
        return line

    def detect(self, img: np.ndarray) -> ProposalSet:
        return self.detect_batch([img])[0]

    def detect_batch(self, imgs) -> list[ProposalSet]:
        if len(imgs) == 0:
            raise ValueError("detect_batch requires a non-empty list")
        self._ensure_connected()
        out: list[ProposalSet] = []
        for start in range(0, len(imgs), self.batch_size):
            chunk = imgs[start : start + self.batch_size]
            try:
                out.extend(self.round_trip(chunk, self.score_floor))
            except BackendError as e:
                idx = start + e.index if e.index is not None else None
                raise BackendError(str(e), index=idx) from e
        return out

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None


# --- descriptor parsing ------------------------------------------------------

def _parse_blob_descriptor(body: str, image_shape=None) -> BlobDetector:
    """``blob[@x1,y1,x2,y2[,class_id]][;...]`` — boxes default to the central
    half of the image when a shape is supplied."""
    specs = []
    class_count = 3
    for part in body.split(";"):
        part = part.strip()
        if not part:
            continue
        if "@" in part:
            _, coords = part.split("@", 1)
            fields = [float(v) for v in coords.split(",")]
            if len(fields) not in (4, 5):
                raise ValueError(f"blob descriptor needs 4 or 5 numbers, got {part!r}")
            box = BBox(*fields[:4])
            class_id = int(fields[4]) if len(fields) == 5 else 0
        else:
            if image_shape is None:
                raise ValueError("blob descriptor without coordinates needs the image shape")
            h, w = image_shape[:2]
            box = BBox(w * 0.25, h * 0.25, w * 0.75, h * 0.75)
            class_id = 0
        if class_id >= class_count:
            class_count = class_id + 1
        specs.append((box, class_id))
    if not specs:
        raise ValueError("empty blob descriptor")
    blob_specs = []
    for box, class_id in specs:
        profile = np.full(class_count, 0.05)
        profile[class_id] = 0.9
        blob_specs.append(BlobSpec(box=box, class_profile=profile))
    return BlobDetector(blob_specs)


def create_detector(descriptor: str, image_shape=None, batch_size: int = DEFAULT_BATCH_SIZE) -> DetectorHandle:
    """Build a backend from a CLI descriptor:

    ``synthetic:blob[@x1,y1,x2,y2[,class]]`` | ``subprocess:<command>`` |
    ``tcp:<host:port>``
    """
    kind, _, body = descriptor.partition(":")
    if kind == "synthetic":
        if body.startswith("blob"):
            return _parse_blob_descriptor(body, image_shape)
        raise ValueError(f"unknown synthetic detector {body!r}")
    if kind == "subprocess":
        if not body:
            raise ValueError("subprocess descriptor needs a command")
        return SubprocessDetector(body, batch_size=batch_size)
    if kind == "tcp":
        host, _, port = body.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp descriptor needs host:port, got {body!r}")
        return TcpDetector(host, int(port), batch_size=batch_size)
    raise ValueError(f"unknown detector descriptor {descriptor!r}")
