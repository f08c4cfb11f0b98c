import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";
import { detect, loadModel, TemplateModel } from "../src/model";

const MODEL_PATH = path.join(__dirname, "..", "models", "template-detector.json");

function grayToRgb(gray: Float32Array): Float32Array {
  const rgb = new Float32Array(gray.length * 3);
  for (let i = 0; i < gray.length; i++) {
    rgb[3 * i] = gray[i];
    rgb[3 * i + 1] = gray[i];
    rgb[3 * i + 2] = gray[i];
  }
  return rgb;
}

/** Paint one class template into a flat background at (x, y). */
function sceneWithTemplate(
  model: TemplateModel,
  classId: number,
  size: number,
  x: number,
  y: number,
  background = 0.08,
): Float32Array {
  const gray = new Float32Array(size * size).fill(background);
  const t = model.templates[classId];
  for (let ty = 0; ty < t.height; ty++) {
    for (let tx = 0; tx < t.width; tx++) {
      gray[(y + ty) * size + (x + tx)] = t.kernel[ty * t.width + tx];
    }
  }
  return grayToRgb(gray);
}

describe("loadModel", () => {
  it("loads the shipped weights", () => {
    const model = loadModel(MODEL_PATH);
    expect(model.classes.length).toBeGreaterThanOrEqual(2);
    expect(model.templates.length).toBe(model.classes.length);
    for (const t of model.templates) {
      expect(t.kernel.length).toBe(t.width * t.height);
      expect(t.std).toBeGreaterThan(0);
    }
  });

  it("rejects other formats and broken kernels", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "bridge-model-"));
    const bad1 = path.join(dir, "bad1.json");
    fs.writeFileSync(bad1, JSON.stringify({ format: "something-else", classes: ["a"], templates: [] }));
    expect(() => loadModel(bad1)).toThrow(/format/);
    const bad2 = path.join(dir, "bad2.json");
    fs.writeFileSync(
      bad2,
      JSON.stringify({
        format: "template-correlation-v1",
        classes: ["a"],
        templates: [{ class_id: 0, width: 2, height: 2, kernel: [1, 2, 3] }],
      }),
    );
    expect(() => loadModel(bad2)).toThrow(/length/);
  });
});

describe("detect", () => {
  const model = loadModel(MODEL_PATH);

  it("finds a planted template at the right place", () => {
    const size = 64;
    const img = sceneWithTemplate(model, 0, size, 20, 12);
    const dets = detect(model, img, size, size);
    expect(dets.length).toBeGreaterThanOrEqual(1);
    const best = dets[0];
    expect(best.objectness).toBeGreaterThan(0.9);
    expect(best.scores[0]).toBeGreaterThan(best.scores[1]);
    // stride quantizes the position; the box must cover the plant site
    expect(Math.abs(best.box[0] - 20)).toBeLessThanOrEqual(model.stride);
    expect(Math.abs(best.box[1] - 12)).toBeLessThanOrEqual(model.stride);
  });

  it("emits the full class-score vector", () => {
    const size = 64;
    const img = sceneWithTemplate(model, 1, size, 8, 30);
    const dets = detect(model, img, size, size);
    expect(dets[0].scores.length).toBe(model.classes.length);
    expect(dets[0].scores[1]).toBeGreaterThan(0.9);
  });

  it("returns nothing on a black image", () => {
    const img = new Float32Array(48 * 48 * 3);
    expect(detect(model, img, 48, 48)).toEqual([]);
  });

  it("returns nothing on a flat bright image", () => {
    const img = new Float32Array(48 * 48 * 3).fill(0.9);
    expect(detect(model, img, 48, 48)).toEqual([]);
  });

  it("is deterministic", () => {
    const size = 64;
    const img = sceneWithTemplate(model, 0, size, 16, 16);
    const a = JSON.stringify(detect(model, img, size, size));
    const b = JSON.stringify(detect(model, img, size, size));
    expect(a).toBe(b);
  });

  it("suppresses overlapping duplicates", () => {
    const size = 64;
    const img = sceneWithTemplate(model, 0, size, 20, 20);
    const dets = detect(model, img, size, size);
    for (let i = 0; i < dets.length; i++) {
      for (let j = i + 1; j < dets.length; j++) {
        const a = dets[i].box;
        const b = dets[j].box;
        const ix = Math.max(Math.min(a[2], b[2]) - Math.max(a[0], b[0]), 0);
        const iy = Math.max(Math.min(a[3], b[3]) - Math.max(a[1], b[1]), 0);
        const inter = ix * iy;
        const union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
        expect(inter / union).toBeLessThan(0.5);
      }
    }
  });

  it("loses the detection when the template region is occluded", () => {
    const size = 64;
    const img = sceneWithTemplate(model, 0, size, 20, 12);
    const occluded = Float32Array.from(img);
    const t = model.templates[0];
    for (let ty = 0; ty < t.height; ty++) {
      for (let tx = 0; tx < t.width; tx++) {
        const p = (12 + ty) * size + (20 + tx);
        occluded[3 * p] = 0;
        occluded[3 * p + 1] = 0;
        occluded[3 * p + 2] = 0;
      }
    }
    const before = detect(model, img, size, size);
    const after = detect(model, occluded, size, size);
    const bestAfter = after.length ? after[0].objectness : 0;
    expect(before[0].objectness).toBeGreaterThan(0.9);
    expect(bestAfter).toBeLessThan(0.3);
  });
});
