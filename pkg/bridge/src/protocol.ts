/**
 * The line-delimited JSON detector protocol.
 *
 * Request:  {"id": number, "width": number, "height": number,
 *            "pixels": base64 of row-major 8-bit RGB}
 * Response: {"id": number, "detections": [{"box": [x1, y1, x2, y2],
 *            "objectness": number, "scores": number[]}]}
 * Errors:   {"id": number | null, "error": string}
 *
 * Field names are part of the wire contract and must not change.
 */

export interface DetectRequest {
  id: number;
  width: number;
  height: number;
  /** Row-major 8-bit RGB image, width * height * 3 bytes. */
  pixels: Float32Array;
}

export interface Detection {
  box: [number, number, number, number];
  objectness: number;
  scores: number[];
}

export class ProtocolError extends Error {
  readonly requestId: number | null;

  constructor(message: string, requestId: number | null = null) {
    super(message);
    this.requestId = requestId;
  }
}

/** Parse one request line; pixel values come out as floats in [0, 1]. */
export function parseRequest(line: string): DetectRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError(`malformed JSON: ${(e as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ProtocolError("request must be a JSON object");
  }
  const msg = raw as Record<string, unknown>;
  const id = typeof msg.id === "number" ? msg.id : null;
  if (id === null) {
    throw new ProtocolError("request is missing a numeric 'id'");
  }
  const width = msg.width;
  const height = msg.height;
  if (typeof width !== "number" || typeof height !== "number" || width < 1 || height < 1) {
    throw new ProtocolError("request needs positive 'width' and 'height'", id);
  }
  if (typeof msg.pixels !== "string") {
    throw new ProtocolError("request needs base64 'pixels'", id);
  }
  const bytes = Buffer.from(msg.pixels, "base64");
  if (bytes.length !== width * height * 3) {
    throw new ProtocolError(
      `pixel payload is ${bytes.length} bytes, expected ${width * height * 3}`,
      id,
    );
  }
  const pixels = new Float32Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) {
    pixels[i] = bytes[i] / 255.0;
  }
  return { id, width, height, pixels };
}

export function responseLine(id: number, detections: Detection[]): string {
  return JSON.stringify({ id, detections });
}

export function errorLine(id: number | null, message: string): string {
  return JSON.stringify({ id, error: message });
}
