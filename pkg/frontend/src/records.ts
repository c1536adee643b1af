/** Record shapes crossing the CLI boundary, mirroring the JSONL files. */

/** One encoded line: token ids plus a word-start flag per position. */
export interface EncodedRecord {
  ids: number[];
  marks: boolean[];
}

/**
 * One corrupted sequence. `selection` is 0/1 per position; `labels` follows
 * the objective's convention (original ids with -1 elsewhere, or 0/1 flags);
 * `provenance` is the (source cluster, target cluster) pair per selected
 * position and only present for the cluster-aware objective.
 */
export interface CorruptionRecord {
  ids: number[];
  labels: number[];
  selection: number[];
  provenance?: [number, number][];
}

/** Two text sides with a label; ssp, sp, and psd emit these. */
export interface PairRecord {
  l: string;
  r: string;
  y: string;
  obj: string;
  prov: Record<string, unknown>;
}

/** A pivot sentence with k candidates and per-candidate 0/1 labels (mspp). */
export interface JointRecord {
  pivot: string;
  cands: string[];
  ys: number[];
  prov: Record<string, unknown>;
}

/** A labeled pair plus its context passage; sdc, dpc, and dslc emit these. */
export interface ContextRecord {
  a: string;
  b: string;
  c: string;
  y: string;
  kind: string;
  prov: Record<string, unknown>;
}

/** Document body as source, opening paragraph as target (sds). */
export interface SummaryRecord {
  src: string;
  tgt: string;
  prov: Record<string, unknown>;
}

export type GeneratedRecord = PairRecord | JointRecord | ContextRecord | SummaryRecord;

export const GEN_OBJECTIVES = [
  "ssp",
  "sp",
  "psd",
  "mspp",
  "sdc",
  "dpc",
  "dslc",
  "sds",
] as const;

export const CORRUPT_OBJECTIVES = ["mlm", "rts", "crts", "slm"] as const;

export type GenObjective = (typeof GEN_OBJECTIVES)[number];
export type CorruptObjective = (typeof CORRUPT_OBJECTIVES)[number];
