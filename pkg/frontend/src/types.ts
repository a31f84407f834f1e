// DTOs mirroring the admin API payloads. The console renders these
// verbatim; it never derives device state on its own.

export interface DeviceRecord {
  device_id: string;
  address: string;
  last_seen: string;
  last_session: string;
  cached_devinfo: Record<string, string>;
  devinfo_session: string;
  cached_inventory: InventoryRow[] | null;
  inventory_session: string;
}

export interface InventoryRow {
  app_id: string;
  name: string;
  version: string;
  state: string;
  origin: string;
}

export interface InventoryResponse {
  device_id: string;
  session_id: string;
  rows: InventoryRow[];
}

export interface NodeProperties {
  format: string;
  type: string;
  title: string;
  verno: number;
  tstamp: string;
  size: number;
}

export interface TreeNodeView {
  uri: string;
  name: string;
  kind: "interior" | "leaf";
  permanence: string;
  properties: NodeProperties;
  acl: string | null;
  value?: string;
  value_b64?: string;
  children: string[] | null;
}

export interface TargetStatus {
  state: "pending" | "done" | "failed";
  code?: number;
  label?: string;
  reason?: string;
  session_id: string;
}

export interface JobView {
  job_id: string;
  action: string;
  targets: string[];
  app_id: string | null;
  state: "pending" | "running" | "done";
  created: string;
  finished: string;
  target_status: Record<string, TargetStatus>;
}

export interface JobRequest {
  action: string;
  targets: string[];
  app_id?: string;
  descriptor?: Record<string, unknown>;
  payload_b64?: string;
  uri?: string;
  container_hint?: string;
}

export interface TranscriptPackage {
  direction: "client" | "server";
  msg_id: number;
  phase: string;
  raw: string; // base64 of the wire bytes
  commands: string[];
}

export interface TranscriptOutcome {
  outcome: "ok" | "aborted";
  reason: string;
  session_id: string;
  device_id: string;
}

export interface Transcript {
  packages: TranscriptPackage[];
  outcome: TranscriptOutcome | null;
}
