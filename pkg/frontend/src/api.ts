// Thin typed client for the annotation service's JSON API.

import type { Task } from "./state";

export interface SubmitBody {
  task_id: string;
  annotator_id: string;
  answers: Record<string, number>;
  elapsed_seconds: number;
}

export interface FieldError {
  message: string;
  field: string | null;
  code: string;
}

export type SubmitResult =
  | { kind: "accepted"; taskComplete: boolean }
  | { kind: "duplicate"; message: string }
  | { kind: "rejected"; error: FieldError };

/** Transport-level failure: the service did not answer at all. */
export class ServiceUnreachable extends Error {
  constructor(cause: unknown) {
    super(`annotation service unreachable: ${cause}`);
    this.name = "ServiceUnreachable";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** What the page needs from the service; ApiClient is the HTTP implementation. */
export interface AnnotationApi {
  nextTask(annotatorId: string, batchId?: string): Promise<Task | null>;
  submit(body: SubmitBody): Promise<SubmitResult>;
  guidelines(templateId: string): Promise<string>;
}

export class ApiClient implements AnnotationApi {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    try {
      return await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ServiceUnreachable(err);
    }
  }

  async nextTask(annotatorId: string, batchId?: string): Promise<Task | null> {
    const query = batchId ? `?batch=${encodeURIComponent(batchId)}` : "";
    const res = await this.request(
      `/annotators/${encodeURIComponent(annotatorId)}/next${query}`,
    );
    if (!res.ok) throw new ServiceUnreachable(`next task: HTTP ${res.status}`);
    const body = (await res.json()) as { task: Task | null };
    return body.task;
  }

  async submit(body: SubmitBody): Promise<SubmitResult> {
    const res = await this.request("/responses", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (res.status === 201) {
      const ack = (await res.json()) as { task_complete: boolean };
      return { kind: "accepted", taskComplete: ack.task_complete };
    }
    if (res.status === 409) {
      // already answered, or filled by other annotators while we typed;
      // either way the right move is to move on, not to error out
      const body = (await res.json()) as { detail: string };
      return { kind: "duplicate", message: body.detail };
    }
    if (res.status === 400) {
      const body = (await res.json()) as { detail: FieldError };
      return { kind: "rejected", error: body.detail };
    }
    throw new ServiceUnreachable(`submit: HTTP ${res.status}`);
  }

  async guidelines(templateId: string): Promise<string> {
    const res = await this.request(`/guidelines/${encodeURIComponent(templateId)}`);
    if (!res.ok) throw new ServiceUnreachable(`guidelines: HTTP ${res.status}`);
    return res.text();
  }
}
