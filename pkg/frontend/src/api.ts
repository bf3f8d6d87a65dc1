// Typed client for the activeanom service. The console has no privileged
// channel; everything goes through the same public HTTP API.

export interface QueueItem {
  index: number;
  rank: number;
  base_score: number;
  head_score: number | null;
  features: number[];
  image_shape: [number, number] | null;
}

export interface QueuePayload {
  run_id: string;
  round: number;
  ranked_by: string;
  k: number;
  items: QueueItem[];
}

export interface RunView {
  run_id: string;
  status: string;
  expert: string;
  dataset: string;
  budget_total: number;
  budget_spent: number;
  error: string | null;
}

export interface RoundSummary {
  round: number;
  k: number;
  found_in_round: number;
  cumulative_found: number;
  ranked_by: string;
}

export interface Metrics {
  run_id: string;
  status: string;
  budget_total: number;
  budget_spent: number;
  anomalies_found: number;
  curve: [number, number][];
  rounds: RoundSummary[];
}

export interface LabelDecision {
  index: number;
  label: 0 | 1;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private base: string) {
    this.base = base.replace(/\/+$/, '');
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getRun(runId: string): Promise<RunView> {
    return this.request(`/runs/${runId}`);
  }

  getQueue(runId: string): Promise<QueuePayload> {
    return this.request(`/runs/${runId}/queue`);
  }

  getMetrics(runId: string): Promise<Metrics> {
    return this.request(`/runs/${runId}/metrics`);
  }

  submitLabels(
    runId: string,
    labels: LabelDecision[],
    idempotencyKey?: string,
  ): Promise<{ run_id: string; round: number; accepted: number }> {
    return this.request(`/runs/${runId}/labels`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ labels, idempotency_key: idempotencyKey ?? null }),
    });
  }

  registerDataset(name: string, path: string): Promise<unknown> {
    return this.request('/datasets', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ name, path }),
    });
  }

  createRun(body: {
    dataset: string;
    expert: string;
    config: Record<string, unknown>;
  }): Promise<{ run_id: string }> {
    return this.request('/runs', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  /** Poll until the run reaches one of the given statuses. */
  async waitForStatus(
    runId: string,
    statuses: string[],
    timeoutMs = 60_000,
    pollMs = 150,
  ): Promise<RunView> {
    const deadline = Date.now() + timeoutMs;
    let run = await this.getRun(runId);
    while (!statuses.includes(run.status)) {
      if (Date.now() > deadline) {
        throw new Error(`run ${runId} stuck in ${run.status}, wanted ${statuses}`);
      }
      await new Promise((resolve) => setTimeout(resolve, pollMs));
      run = await this.getRun(runId);
    }
    return run;
  }
}
