import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { DEFAULT_COMMAND, runCli } from "../src/run.js";

/** Lines every fixture encodes; all drawn from the bundled corpus style. */
export const SAMPLE_TEXTS = [
  "Amber north mist wind. Amber north sand frost.",
  "Basalt south stone river. Basalt east wave cloud.",
  "Cedar west rain fog. Cedar north tide stone.",
];

export interface Fixture {
  dir: string;
  vocab: string;
  clusters: string;
  vocabSize: number;
  cleanup(): void;
}

/** Trains a vocabulary once and fabricates a small cluster map beside it. */
export function makeFixture(): Fixture {
  const dir = mkdtempSync(join(tmpdir(), "objforge-fixture-"));
  const vocab = join(dir, "vocab.json");
  runCli(DEFAULT_COMMAND, ["tok", "train", "--corpus", "toy", "--out", vocab, "--seed", "0"]);
  const tokens = (JSON.parse(readFileSync(vocab, "utf-8")) as { tokens: string[] }).tokens;
  const clusters = join(dir, "clusters.json");
  const n = 8;
  writeFileSync(
    clusters,
    JSON.stringify({ n, assignment: tokens.map((_, i) => i % n) }) + "\n",
  );
  return {
    dir,
    vocab,
    clusters,
    vocabSize: tokens.length,
    cleanup: () => rmSync(dir, { recursive: true, force: true }),
  };
}

export function writeLines(path: string, lines: string[]): void {
  writeFileSync(path, lines.join("\n") + "\n");
}

export function readLines(path: string): string[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0);
}
