// Job polling: one in-flight request at a time, fixed interval, until the
// job reports done or the attempt budget runs out.

import type { ApiClient } from "./api.js";
import type { JobView } from "./types.js";

export interface PollOptions {
  intervalMs?: number;
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function pollJob(
  api: ApiClient,
  jobId: string,
  options: PollOptions = {},
): Promise<JobView> {
  const intervalMs = options.intervalMs ?? 1000;
  const maxAttempts = options.maxAttempts ?? 120;
  const sleep = options.sleep ?? defaultSleep;
  let job = await api.job(jobId);
  let attempts = 1;
  while (job.state !== "done") {
    if (attempts >= maxAttempts) {
      throw new Error(`job ${jobId} still ${job.state} after ${attempts} polls`);
    }
    await sleep(intervalMs);
    job = await api.job(jobId);
    attempts += 1;
  }
  return job;
}
