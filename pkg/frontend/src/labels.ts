// Status-code label table, mirroring the protocol's closed code set.

export const STATUS_LABELS: Record<number, string> = {
  200: "OK",
  202: "Accepted for processing",
  401: "Unauthorized",
  404: "Not found",
  405: "Command not allowed on target",
  406: "Unsupported property",
  418: "Already exists",
  425: "Permission denied",
  500: "Command failed",
};

export function statusLabel(code: number): string {
  return STATUS_LABELS[code] ?? "Unknown code";
}

// Actions the console may trigger per displayed state. The server stays
// authoritative: a stale view simply earns a 404/405 status panel.
export const ACTIONS_BY_STATE: Record<string, string[]> = {
  downloadable: ["start_download"],
  delivered: ["install", "remove"],
  inactive: ["activate", "remove"],
  active: ["deactivate", "remove"],
};

export function actionsFor(state: string): string[] {
  return ACTIONS_BY_STATE[state] ?? [];
}

export function containerHintFor(state: string): string {
  return state === "delivered" ? "delivered" : "deployed";
}
