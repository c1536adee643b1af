import { mkdtempSync, mkdirSync, readFileSync, readdirSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import {
  CORRUPT_OBJECTIVES,
  GEN_OBJECTIVES,
  type CorruptObjective,
  type CorruptionRecord,
  type EncodedRecord,
  type GenObjective,
  type GeneratedRecord,
} from "./records.js";
import { DEFAULT_COMMAND, runCli } from "./run.js";

export class SessionClosedError extends Error {
  constructor() {
    super("session is closed");
    this.name = "SessionClosedError";
  }
}

/** Bad arguments caught before any process is spawned. */
export class BindingsError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "BindingsError";
  }
}

export interface SessionPaths {
  /** Vocabulary JSON produced by `tok train`; required. */
  vocab: string;
  /** Cluster map JSON; required only for cluster-aware corruption. */
  clusters?: string;
  /** Count matrix JSON for cluster-aware corruption; zeros when omitted. */
  fmatrix?: string;
  /** Root seed forwarded to every stage. */
  seed?: number;
  /** CLI launcher; defaults to `python3 -m objforge.cli`. */
  command?: string[];
}

export interface CorruptOptions {
  rate?: number;
  gamma?: number;
}

export interface GenerateOptions {
  /** Corpus JSONL path, or "toy" for the bundled one (the default). */
  corpus?: string;
  /** Stop after this many records. */
  limit?: number;
  shards?: number;
  /** Candidate count for the multi-candidate objective. */
  k?: number;
}

interface VocabHandle {
  tokens: string[];
  mode: string;
}

function parseLines<T>(lines: string[]): T[] {
  return lines.map((line) => JSON.parse(line) as T);
}

function nonBlankLines(text: string): string[] {
  return text.split("\n").filter((line) => line.trim().length > 0);
}

/**
 * One connection to the CLI: holds the artifact paths and a scratch
 * directory, shells out per operation, and parses the documented file
 * formats back into plain records.
 */
export class BindingSession {
  readonly vocabPath: string;
  readonly seed: number;
  private readonly clustersPath?: string;
  private readonly fmatrixPath?: string;
  private readonly command: readonly string[];
  private readonly vocab: VocabHandle;
  private readonly work: string;
  private calls = 0;
  private closed = false;

  constructor(paths: SessionPaths) {
    this.vocabPath = paths.vocab;
    this.clustersPath = paths.clusters;
    this.fmatrixPath = paths.fmatrix;
    this.seed = paths.seed ?? 0;
    this.command = paths.command ?? DEFAULT_COMMAND;
    let parsed: unknown;
    try {
      parsed = JSON.parse(readFileSync(paths.vocab, "utf-8"));
    } catch (err) {
      throw new BindingsError(`vocab ${paths.vocab}: ${(err as Error).message}`);
    }
    const v = parsed as Partial<VocabHandle>;
    if (!Array.isArray(v.tokens) || typeof v.mode !== "string") {
      throw new BindingsError(`vocab ${paths.vocab}: not a vocabulary file`);
    }
    this.vocab = { tokens: v.tokens, mode: v.mode };
    this.work = mkdtempSync(join(tmpdir(), "objforge-session-"));
  }

  /** Number of token types in the loaded vocabulary. */
  get vocabSize(): number {
    return this.vocab.tokens.length;
  }

  get isOpen(): boolean {
    return !this.closed;
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    rmSync(this.work, { recursive: true, force: true });
  }

  private ensureOpen(): void {
    if (this.closed) throw new SessionClosedError();
  }

  private scratch(name: string): string {
    this.calls += 1;
    return join(this.work, `${this.calls}-${name}`);
  }

  private invoke(args: string[], outPath: string): string[] {
    runCli(this.command, [...args, "--seed", String(this.seed)]);
    return nonBlankLines(readFileSync(outPath, "utf-8"));
  }

  encodeLines(texts: string[]): string[] {
    this.ensureOpen();
    if (texts.length === 0) throw new BindingsError("no texts to encode");
    for (const t of texts) {
      if (!t.trim()) throw new BindingsError("texts must be non-empty");
      if (t.includes("\n")) throw new BindingsError("texts must be single lines");
    }
    const input = this.scratch("lines.txt");
    const out = this.scratch("encoded.jsonl");
    writeFileSync(input, texts.join("\n") + "\n");
    const rows = this.invoke(
      ["tok", "encode", "--vocab", this.vocabPath, "--input", input, "--out", out],
      out,
    );
    if (rows.length !== texts.length) {
      throw new BindingsError(`expected ${texts.length} rows, CLI wrote ${rows.length}`);
    }
    return rows;
  }

  encodeMany(texts: string[]): EncodedRecord[] {
    return parseLines<EncodedRecord>(this.encodeLines(texts));
  }

  encode(text: string): EncodedRecord {
    const row = this.encodeMany([text])[0];
    if (!row) throw new BindingsError("encode produced no row");
    return row;
  }

  decodeMany(records: EncodedRecord[]): string[] {
    this.ensureOpen();
    if (records.length === 0) throw new BindingsError("no records to decode");
    for (const r of records) {
      if (r.ids.length !== r.marks.length) {
        throw new BindingsError("ids and marks lengths differ");
      }
    }
    const input = this.scratch("sequences.jsonl");
    const out = this.scratch("decoded.jsonl");
    writeFileSync(
      input,
      records.map((r) => JSON.stringify({ ids: r.ids, marks: r.marks })).join("\n") + "\n",
    );
    const rows = this.invoke(
      ["tok", "decode", "--vocab", this.vocabPath, "--input", input, "--out", out],
      out,
    );
    return parseLines<{ text: string }>(rows).map((r) => r.text);
  }

  decode(record: EncodedRecord): string {
    const text = this.decodeMany([record])[0];
    if (text === undefined) throw new BindingsError("decode produced no row");
    return text;
  }

  corruptLines(
    rows: number[][],
    objective: CorruptObjective,
    options: CorruptOptions = {},
  ): string[] {
    this.ensureOpen();
    if (!CORRUPT_OBJECTIVES.includes(objective)) {
      throw new BindingsError(`unknown corruption objective: ${objective}`);
    }
    if (rows.length === 0) throw new BindingsError("no rows to corrupt");
    if (objective === "crts" && !this.clustersPath) {
      throw new BindingsError("cluster-aware corruption needs a clusters path");
    }
    const input = this.scratch("ids.jsonl");
    const out = this.scratch("corrupted.jsonl");
    writeFileSync(input, rows.map((ids) => JSON.stringify({ ids })).join("\n") + "\n");
    const args = [
      "corrupt",
      objective,
      "--vocab",
      this.vocabPath,
      "--input",
      input,
      "--out",
      out,
    ];
    if (objective === "crts") {
      args.push("--clusters", this.clustersPath as string);
      if (this.fmatrixPath) args.push("--fmatrix", this.fmatrixPath);
    }
    if (options.rate !== undefined) args.push("--rate", String(options.rate));
    if (options.gamma !== undefined) args.push("--gamma", String(options.gamma));
    return this.invoke(args, out);
  }

  corruptMany(
    rows: number[][],
    objective: CorruptObjective,
    options: CorruptOptions = {},
  ): CorruptionRecord[] {
    return parseLines<CorruptionRecord>(this.corruptLines(rows, objective, options));
  }

  corrupt(
    ids: number[],
    objective: CorruptObjective,
    options: CorruptOptions = {},
  ): CorruptionRecord {
    const row = this.corruptMany([ids], objective, options)[0];
    if (!row) throw new BindingsError("corrupt produced no row");
    return row;
  }

  generateLines(objective: GenObjective, options: GenerateOptions = {}): string[] {
    this.ensureOpen();
    if (!GEN_OBJECTIVES.includes(objective)) {
      throw new BindingsError(`unknown generation objective: ${objective}`);
    }
    const outDir = this.scratch(`gen-${objective}`);
    mkdirSync(outDir, { recursive: true });
    const args = [
      "gen",
      objective,
      "--corpus",
      options.corpus ?? "toy",
      "--out-dir",
      outDir,
      "--shards",
      String(options.shards ?? 1),
    ];
    if (options.k !== undefined) args.push("--k", String(options.k));
    runCli(this.command, [...args, "--seed", String(this.seed)]);
    const lines: string[] = [];
    for (const shard of readdirSync(outDir).sort()) {
      lines.push(...nonBlankLines(readFileSync(join(outDir, shard), "utf-8")));
      if (options.limit !== undefined && lines.length >= options.limit) break;
    }
    return options.limit === undefined ? lines : lines.slice(0, options.limit);
  }

  generate<T extends GeneratedRecord = GeneratedRecord>(
    objective: GenObjective,
    options: GenerateOptions = {},
  ): T[] {
    return parseLines<T>(this.generateLines(objective, options));
  }

  /** Streaming view over generate(); records are read shard by shard. */
  *iterate<T extends GeneratedRecord = GeneratedRecord>(
    objective: GenObjective,
    options: GenerateOptions = {},
  ): IterableIterator<T> {
    yield* this.generate<T>(objective, options);
  }
}

export function openSession(paths: SessionPaths): BindingSession {
  return new BindingSession(paths);
}
