// Typed client for the annotation service. Only the documented routes:
// POST /api/annotators, GET /api/batches/next, POST /api/batches/{id}.

export interface NleSlot {
  slot_id: string;
  text: string;
}

export interface BatchItem {
  instance_id: string;
  task: string;
  task_fields: Record<string, string>;
  label_options: string[];
  nles: NleSlot[];
}

export interface BatchPayload {
  batch_id: string;
  items: BatchItem[];
}

export interface WireRecord {
  instance_id: string;
  label: string;
  ratings: Record<string, string>;
  shortcomings: Record<string, string[]>;
}

export interface GateOutcome {
  passed: boolean;
  failures: string[];
  label_correct_pct: number;
  gold_positive_pct: number;
  model_positive_pct: number;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

// any transport-level rejection; the caller keeps its draft and retries
export class OfflineError extends Error {
  constructor() {
    super("the service is unreachable");
    this.name = "OfflineError";
  }
}

export class Client {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly base: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch {
      throw new OfflineError();
    }
    if (response.status >= 400) {
      throw new ApiError(response.status, await response.text());
    }
    return response;
  }

  async register(name: string): Promise<string> {
    const response = await this.request("/api/annotators", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ name }),
    });
    const body = (await response.json()) as { annotator: string };
    return body.annotator;
  }

  async nextBatch(annotator: string): Promise<BatchPayload | null> {
    const query = new URLSearchParams({ annotator });
    const response = await this.request(`/api/batches/next?${query}`);
    if (response.status === 204) {
      return null;
    }
    return (await response.json()) as BatchPayload;
  }

  async submit(
    annotator: string,
    batchId: string,
    records: WireRecord[],
  ): Promise<GateOutcome> {
    const response = await this.request(
      `/api/batches/${encodeURIComponent(batchId)}`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ annotator, records }),
      },
    );
    return (await response.json()) as GateOutcome;
  }
}
