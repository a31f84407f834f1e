// View controller: glues the API client, renderers and job polling.
// Returns HTML strings so the whole flow runs under plain node tests;
// main.ts owns the actual DOM.

import { ApiClient, ApiError } from "./api.js";
import { containerHintFor } from "./labels.js";
import { pollJob } from "./poll.js";
import {
  deviceListView,
  devinfoSummary,
  errorBanner,
  inventoryView,
  jobPanel,
  sessionTimeline,
  treeNodeView,
} from "./render.js";
import type { JobRequest, JobView } from "./types.js";

export interface ControllerOptions {
  pollIntervalMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

export interface ActionResult {
  job: JobView;
  panelHtml: string;
  inventoryHtml: string;
}

export class ConsoleController {
  constructor(
    readonly api: ApiClient,
    private readonly options: ControllerOptions = {},
  ) {}

  async devicesPage(): Promise<string> {
    try {
      return deviceListView(await this.api.listDevices());
    } catch (err) {
      return errorBanner(describe(err));
    }
  }

  async devinfoPanel(deviceId: string): Promise<string> {
    const devices = await this.api.listDevices();
    const record = devices.find((d) => d.device_id === deviceId);
    if (record === undefined) {
      return errorBanner(`unknown device ${deviceId}`);
    }
    return devinfoSummary(record);
  }

  async inventoryPanel(deviceId: string): Promise<string> {
    try {
      return inventoryView(await this.api.inventory(deviceId));
    } catch (err) {
      return errorBanner(describe(err));
    }
  }

  async treePanel(deviceId: string, uri?: string): Promise<string> {
    try {
      return treeNodeView(await this.api.treeNode(deviceId, uri));
    } catch (err) {
      return errorBanner(describe(err));
    }
  }

  async sessionPage(sessionId: string): Promise<string> {
    try {
      return sessionTimeline(sessionId, await this.api.transcript(sessionId));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        return errorBanner(`no transcript for session ${sessionId}`);
      }
      return errorBanner(describe(err));
    }
  }

  /** Submit a single-target lifecycle job, await it, refresh inventory. */
  async triggerAction(
    deviceId: string,
    action: string,
    appId: string,
    displayedState: string,
  ): Promise<ActionResult> {
    const body: JobRequest = {
      action,
      targets: [deviceId],
      app_id: appId,
      container_hint: containerHintFor(displayedState),
    };
    const jobId = await this.api.submitJob(body);
    const job = await pollJob(this.api, jobId, {
      intervalMs: this.options.pollIntervalMs ?? 1000,
      sleep: this.options.sleep,
    });
    const inventoryHtml = await this.inventoryPanel(deviceId);
    return { job, panelHtml: jobPanel(job), inventoryHtml };
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? err.message : `API error ${err.status}: ${err.message}`;
  }
  return String(err);
}
