/**
 * Template-correlation detector.
 *
 * The model file is JSON: a class-name list plus one grayscale template per
 * class, with weights serialized row-major. Detection slides every template
 * over the (grayscale) image and scores each window as the zero-mean
 * normalized cross-correlation with the template, gated by the window/
 * template brightness ratio:
 *
 *     score_c(window) = max(ncc(window, K_c), 0) * clamp(mean(window) / mean(K_c), 0, 1)
 *
 * The correlation term makes the response pattern-selective (bright sky does
 * not match a checkered crate) while the brightness gate makes it fall
 * monotonically as evidence pixels are occluded - the behavior a
 * perturbation-based explainer measures. Local maxima above the threshold
 * survive a greedy IoU 0.5 suppression pass. Everything is deterministic.
 */

import * as fs from "fs";
import { Detection } from "./protocol";

export interface TemplateModel {
  format: string;
  classes: string[];
  threshold: number;
  stride: number;
  templates: ClassTemplate[];
}

export interface ClassTemplate {
  classId: number;
  width: number;
  height: number;
  /** Row-major grayscale weights in [0, 1]. */
  kernel: Float32Array;
  mean: number;
  /** Standard deviation of the kernel weights (pattern energy). */
  std: number;
}

const FORMAT = "template-correlation-v1";

export function loadModel(path: string): TemplateModel {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (raw.format !== FORMAT) {
    throw new Error(`unsupported model format ${raw.format}, expected ${FORMAT}`);
  }
  if (!Array.isArray(raw.classes) || raw.classes.length === 0) {
    throw new Error("model needs a non-empty class list");
  }
  const templates: ClassTemplate[] = raw.templates.map((t: any) => {
    const kernel = Float32Array.from(t.kernel as number[]);
    if (kernel.length !== t.width * t.height) {
      throw new Error(`template for class ${t.class_id}: kernel length mismatch`);
    }
    let sum = 0;
    let sum2 = 0;
    for (let i = 0; i < kernel.length; i++) {
      sum += kernel[i];
      sum2 += kernel[i] * kernel[i];
    }
    const mean = sum / kernel.length;
    const variance = Math.max(sum2 / kernel.length - mean * mean, 0);
    const std = Math.sqrt(variance);
    if (mean <= 0 || std <= 0) {
      throw new Error(`template for class ${t.class_id}: degenerate kernel`);
    }
    return { classId: t.class_id, width: t.width, height: t.height, kernel, mean, std };
  });
  return {
    format: raw.format,
    classes: raw.classes,
    threshold: raw.threshold ?? 0.5,
    stride: raw.stride ?? 2,
    templates,
  };
}

function toGray(pixels: Float32Array, width: number, height: number): Float32Array {
  const gray = new Float32Array(width * height);
  for (let p = 0; p < width * height; p++) {
    gray[p] = (pixels[3 * p] + pixels[3 * p + 1] + pixels[3 * p + 2]) / 3.0;
  }
  return gray;
}

function templateResponse(
  gray: Float32Array,
  imgW: number,
  t: ClassTemplate,
  x: number,
  y: number,
): number {
  const n = t.width * t.height;
  let sumW = 0;
  let sumW2 = 0;
  let dot = 0;
  for (let ty = 0; ty < t.height; ty++) {
    const rowImg = (y + ty) * imgW + x;
    const rowK = ty * t.width;
    for (let tx = 0; tx < t.width; tx++) {
      const v = gray[rowImg + tx];
      sumW += v;
      sumW2 += v * v;
      dot += v * t.kernel[rowK + tx];
    }
  }
  const meanW = sumW / n;
  const varW = Math.max(sumW2 / n - meanW * meanW, 0);
  const stdW = Math.sqrt(varW);
  if (stdW <= 1e-9) {
    return 0; // flat window (e.g. fully occluded): no pattern, no response
  }
  const ncc = (dot / n - meanW * t.mean) / (stdW * t.std);
  const brightness = Math.min(Math.max(meanW / t.mean, 0), 1);
  const score = Math.max(ncc, 0) * brightness;
  return score > 1 ? 1 : score;
}

function boxIou(a: [number, number, number, number], b: [number, number, number, number]): number {
  const ix = Math.min(a[2], b[2]) - Math.max(a[0], b[0]);
  const iy = Math.min(a[3], b[3]) - Math.max(a[1], b[1]);
  const inter = Math.max(ix, 0) * Math.max(iy, 0);
  const areaA = (a[2] - a[0]) * (a[3] - a[1]);
  const areaB = (b[2] - b[0]) * (b[3] - b[1]);
  const union = areaA + areaB - inter;
  return union > 0 ? inter / union : 0;
}

interface Candidate {
  box: [number, number, number, number];
  objectness: number;
  scores: number[];
}

export function detect(
  model: TemplateModel,
  pixels: Float32Array,
  width: number,
  height: number,
): Detection[] {
  const gray = toGray(pixels, width, height);
  const candidates: Candidate[] = [];

  // scan positions come from the largest template so every class is scored
  // at every candidate window; smaller templates center inside the window
  for (const anchor of model.templates) {
    if (anchor.width > width || anchor.height > height) {
      continue;
    }
    for (let y = 0; y + anchor.height <= height; y += model.stride) {
      for (let x = 0; x + anchor.width <= width; x += model.stride) {
        const scores = new Array<number>(model.classes.length).fill(0);
        for (const t of model.templates) {
          const cx = x + Math.floor((anchor.width - t.width) / 2);
          const cy = y + Math.floor((anchor.height - t.height) / 2);
          if (cx < 0 || cy < 0 || cx + t.width > width || cy + t.height > height) {
            continue;
          }
          const s = templateResponse(gray, width, t, cx, cy);
          if (s > scores[t.classId]) {
            scores[t.classId] = s;
          }
        }
        const objectness = Math.max(...scores);
        if (objectness >= model.threshold) {
          candidates.push({
            box: [x, y, x + anchor.width, y + anchor.height],
            objectness,
            scores,
          });
        }
      }
    }
  }

  // greedy suppression, deterministic: by descending objectness then by
  // position for exact ties
  candidates.sort(
    (a, b) =>
      b.objectness - a.objectness ||
      a.box[1] - b.box[1] ||
      a.box[0] - b.box[0] ||
      a.box[3] - b.box[3] ||
      a.box[2] - b.box[2],
  );
  const kept: Candidate[] = [];
  for (const c of candidates) {
    if (kept.every((k) => boxIou(k.box, c.box) < 0.5)) {
      kept.push(c);
    }
  }
  return kept.map((c) => ({ box: c.box, objectness: c.objectness, scores: c.scores }));
}
