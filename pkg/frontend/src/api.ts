import type {
  AdjudicationBundle,
  AdjudicationRecord,
  AgreementReport,
  AnnotationRecord,
  GoldLabel,
  NextTaskResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

/** Thin client for the annotation service; the token travels in a header
 * and is never persisted beyond the session. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      ...init,
      headers: {
        "Content-Type": "application/json",
        "X-Annotator-Token": this.token,
        ...(init?.headers ?? {}),
      },
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  nextTask(annotator: string): Promise<NextTaskResponse> {
    return this.request(`/api/tasks/next?annotator=${encodeURIComponent(annotator)}`);
  }

  async submitLabel(record: AnnotationRecord): Promise<void> {
    await this.request(`/api/labels`, {
      method: "POST",
      body: JSON.stringify(record),
    });
  }

  agreement(): Promise<AgreementReport> {
    return this.request(`/api/agreement`);
  }

  async adjudicationQueue(): Promise<AdjudicationBundle[]> {
    const body = await this.request<{ bundles: AdjudicationBundle[] }>(
      `/api/adjudication`,
    );
    return body.bundles;
  }

  async resolve(record: AdjudicationRecord): Promise<void> {
    await this.request(`/api/adjudication/resolve`, {
      method: "POST",
      body: JSON.stringify(record),
    });
  }

  async exportGold(): Promise<GoldLabel[]> {
    const body = await this.request<{ labels: GoldLabel[] }>(`/api/export/gold`);
    return body.labels;
  }
}
