// Thin typed client over the admin HTTP API.

import type {
  DeviceRecord,
  InventoryResponse,
  JobRequest,
  JobView,
  Transcript,
  TranscriptOutcome,
  TranscriptPackage,
  TreeNodeView,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `cannot reach server: ${String(err)}`);
    }
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(response.status, body || response.statusText);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  listDevices(): Promise<DeviceRecord[]> {
    return this.json<DeviceRecord[]>("/api/devices");
  }

  inventory(deviceId: string): Promise<InventoryResponse> {
    return this.json<InventoryResponse>(`/api/devices/${deviceId}/inventory`);
  }

  treeNode(deviceId: string, uri?: string): Promise<TreeNodeView> {
    const query = uri === undefined ? "" : `?uri=${encodeURIComponent(uri)}`;
    return this.json<TreeNodeView>(`/api/devices/${deviceId}/tree${query}`);
  }

  async submitJob(body: JobRequest): Promise<string> {
    const doc = await this.json<{ job_id: string }>("/api/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return doc.job_id;
  }

  job(jobId: string): Promise<JobView> {
    return this.json<JobView>(`/api/jobs/${jobId}`);
  }

  async transcript(sessionId: string): Promise<Transcript> {
    const response = await this.request(`/api/sessions/${sessionId}/transcript`);
    return parseTranscript(await response.text());
  }
}

export function parseTranscript(text: string): Transcript {
  const packages: TranscriptPackage[] = [];
  let outcome: TranscriptOutcome | null = null;
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const doc = JSON.parse(line);
    if ("outcome" in doc) {
      outcome = doc as TranscriptOutcome;
    } else {
      packages.push(doc as TranscriptPackage);
    }
  }
  return { packages, outcome };
}

export function decodeBase64(data: string): string {
  if (typeof atob === "function") {
    return atob(data);
  }
  return Buffer.from(data, "base64").toString("binary");
}
