/** Typed client for the annotation HTTP API. */

export interface PendingItem {
  id: number;
  text: string;
}

export interface StatusPayload {
  round: number;
  phase: string;
  pending_ids: number[];
}

export interface Rejection {
  id: number;
  reason: string;
}

export interface SubmitOutcome {
  accepted: number[];
  rejected: Rejection[];
}

export interface LabelSubmission {
  id: number;
  label: number;
}

export interface ApiClient {
  status(): Promise<StatusPayload>;
  batch(): Promise<PendingItem[]>;
  labelset(): Promise<string[]>;
  submitLabels(labels: LabelSubmission[]): Promise<SubmitOutcome>;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly httpStatus: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new ApiError(`GET ${url} failed (${resp.status})`, resp.status);
  }
  return (await resp.json()) as T;
}

/** Client against a base URL; empty base means same-origin. */
export function httpClient(baseUrl = ""): ApiClient {
  return {
    status: () => getJson<StatusPayload>(`${baseUrl}/api/status`),
    batch: () => getJson<PendingItem[]>(`${baseUrl}/api/batch`),
    labelset: () => getJson<string[]>(`${baseUrl}/api/labelset`),
    async submitLabels(labels: LabelSubmission[]): Promise<SubmitOutcome> {
      const resp = await fetch(`${baseUrl}/api/labels`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(labels),
      });
      const body = await resp.json().catch(() => ({}));
      if (!resp.ok) {
        const reason =
          typeof body === "object" && body !== null && "error" in body
            ? String((body as { error: unknown }).error)
            : `POST /api/labels failed (${resp.status})`;
        throw new ApiError(reason, resp.status);
      }
      return body as SubmitOutcome;
    },
  };
}
