/** Poll a background job until it reaches a terminal state. */

import type { ApiClient, Job } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onProgress?: (job: Job) => void;
}

export async function pollJob(
  client: ApiClient,
  jobId: string,
  options: PollOptions = {},
): Promise<Job> {
  const interval = options.intervalMs ?? 500;
  const timeout = options.timeoutMs ?? 10 * 60 * 1000;
  const deadline = Date.now() + timeout;
  for (;;) {
    const job = await client.getJob(jobId);
    if (options.onProgress) options.onProgress(job);
    if (job.status === "done") return job;
    if (job.status === "error") {
      throw new Error(job.error ?? `job ${jobId} failed`);
    }
    if (Date.now() >= deadline) {
      throw new Error(`job ${jobId} timed out after ${timeout}ms`);
    }
    await new Promise((resolve) => setTimeout(resolve, interval));
  }
}
