import { describe, expect, it } from "vitest";
import { errorLine, parseRequest, ProtocolError, responseLine } from "../src/protocol";

function requestLine(id: number, width: number, height: number, value = 128): string {
  const bytes = Buffer.alloc(width * height * 3, value);
  return JSON.stringify({ id, width, height, pixels: bytes.toString("base64") });
}

describe("parseRequest", () => {
  it("decodes a well-formed request", () => {
    const req = parseRequest(requestLine(7, 4, 3, 255));
    expect(req.id).toBe(7);
    expect(req.width).toBe(4);
    expect(req.height).toBe(3);
    expect(req.pixels.length).toBe(4 * 3 * 3);
    expect(req.pixels[0]).toBeCloseTo(1.0, 6);
  });

  it("rejects non-JSON", () => {
    expect(() => parseRequest("not json")).toThrow(ProtocolError);
  });

  it("rejects a missing id", () => {
    expect(() => parseRequest('{"width": 2, "height": 2, "pixels": ""}')).toThrow(/id/);
  });

  it("carries the offending id for bad payloads", () => {
    const line = JSON.stringify({ id: 42, width: 5, height: 5, pixels: "AAAA" });
    try {
      parseRequest(line);
      throw new Error("should have thrown");
    } catch (e) {
      expect(e).toBeInstanceOf(ProtocolError);
      expect((e as ProtocolError).requestId).toBe(42);
    }
  });

  it("rejects non-positive dimensions", () => {
    expect(() => parseRequest('{"id": 1, "width": 0, "height": 2, "pixels": ""}')).toThrow(
      ProtocolError,
    );
  });
});

describe("response serialization", () => {
  it("writes detections with the wire field names", () => {
    const line = responseLine(3, [{ box: [1, 2, 3, 4], objectness: 0.5, scores: [0.1, 0.4] }]);
    const parsed = JSON.parse(line);
    expect(parsed.id).toBe(3);
    expect(parsed.detections[0].box).toEqual([1, 2, 3, 4]);
    expect(parsed.detections[0].objectness).toBe(0.5);
    expect(parsed.detections[0].scores).toEqual([0.1, 0.4]);
  });

  it("writes error lines with the id", () => {
    const parsed = JSON.parse(errorLine(9, "boom"));
    expect(parsed.id).toBe(9);
    expect(parsed.error).toBe("boom");
  });
});
