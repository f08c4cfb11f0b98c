#!/usr/bin/env node
/**
 * Detector bridge process: reads protocol requests from stdin, answers on
 * stdout, one JSON document per line, ids preserved, responses in request
 * order. Exits non-zero at startup if the model cannot be loaded; malformed
 * requests produce an error response carrying the offending id and the loop
 * keeps serving.
 *
 * Usage: node server.js --model <model.json> [--threshold 0.5]
 */

import * as readline from "readline";
import { detect, loadModel, TemplateModel } from "./model";
import { errorLine, parseRequest, ProtocolError, responseLine } from "./protocol";

interface Args {
  model: string;
  threshold: number | null;
}

function parseArgs(argv: string[]): Args {
  let model = "";
  let threshold: number | null = null;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--model" && i + 1 < argv.length) {
      model = argv[++i];
    } else if (argv[i] === "--threshold" && i + 1 < argv.length) {
      threshold = Number(argv[++i]);
    } else {
      process.stderr.write(`unknown argument: ${argv[i]}\n`);
      process.exit(2);
    }
  }
  if (!model) {
    process.stderr.write("usage: server --model <model.json> [--threshold t]\n");
    process.exit(2);
  }
  return { model, threshold };
}

export function handleLine(model: TemplateModel, line: string): string {
  try {
    const req = parseRequest(line);
    const detections = detect(model, req.pixels, req.width, req.height);
    return responseLine(req.id, detections);
  } catch (e) {
    if (e instanceof ProtocolError) {
      return errorLine(e.requestId, e.message);
    }
    return errorLine(null, `internal error: ${(e as Error).message}`);
  }
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  let model: TemplateModel;
  try {
    model = loadModel(args.model);
  } catch (e) {
    process.stderr.write(`cannot load model ${args.model}: ${(e as Error).message}\n`);
    process.exit(1);
  }
  if (args.threshold !== null) {
    model = { ...model, threshold: args.threshold };
  }
  process.stderr.write(
    `bridge ready: ${model.classes.length} classes, threshold ${model.threshold}\n`,
  );

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line: string) => {
    const trimmed = line.trim();
    if (trimmed.length === 0) {
      return;
    }
    process.stdout.write(handleLine(model, trimmed) + "\n");
  });
  rl.on("close", () => {
    process.exit(0);
  });
}

if (require.main === module) {
  main();
}
