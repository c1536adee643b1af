import { spawnSync } from "node:child_process";

/** Failure reported by the CLI process, carrying its exit class and stderr. */
export class CliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = "CliError";
  }
}

export const DEFAULT_COMMAND = ["python3", "-m", "objforge.cli"];

const MAX_OUTPUT = 256 * 1024 * 1024; // generated shards can be large

/** Run one CLI invocation to completion; returns stdout on exit 0. */
export function runCli(command: readonly string[], args: readonly string[]): string {
  const [head, ...rest] = command;
  if (!head) throw new CliError("empty CLI command", null, "");
  const proc = spawnSync(head, [...rest, ...args], {
    encoding: "utf-8",
    maxBuffer: MAX_OUTPUT,
  });
  if (proc.error) {
    throw new CliError(`failed to launch ${head}: ${proc.error.message}`, null, "");
  }
  if (proc.status !== 0) {
    const detail = (proc.stderr ?? "").trim();
    throw new CliError(
      detail || `CLI exited with status ${proc.status}`,
      proc.status,
      proc.stderr ?? "",
    );
  }
  return proc.stdout ?? "";
}
