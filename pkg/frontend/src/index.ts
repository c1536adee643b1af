export {
  CORRUPT_OBJECTIVES,
  GEN_OBJECTIVES,
  type ContextRecord,
  type CorruptObjective,
  type CorruptionRecord,
  type EncodedRecord,
  type GenObjective,
  type GeneratedRecord,
  type JointRecord,
  type PairRecord,
  type SummaryRecord,
} from "./records.js";
export { CliError, DEFAULT_COMMAND, runCli } from "./run.js";
export {
  BindingSession,
  BindingsError,
  SessionClosedError,
  openSession,
  type CorruptOptions,
  type GenerateOptions,
  type SessionPaths,
} from "./session.js";
