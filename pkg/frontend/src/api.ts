/** Typed client for the blendiff job service.
 *
 * Paths, payload keys, and error bodies mirror the service exactly; the
 * studio never reshapes responses beyond JSON parsing. The fetch function
 * is injected so tests can point the client at a stub or a live server.
 */

export type Sampler = "blended" | "local_guided" | "ddim_blended" | "naive_blend";
export type Application = "object_edit" | "background_replace" | "scribble" | "extrapolate";
export type JobState = "queued" | "running" | "done" | "failed";

/** Wire payload for POST /api/edits and session steps (base-64 PNGs). */
export interface JobPayload {
  image?: string;
  mask?: string;
  prompt?: string;
  k?: number;
  sampler?: Sampler;
  lambda?: number;
  n_aug?: number;
  seed?: number;
  guidance_scale?: number;
  num_samples?: number;
  application?: Application;
  dilate_radius?: number;
  scribble_image?: string;
  scribble_mask?: string;
  prompt_left?: string;
  prompt_right?: string;
  segments_left?: number;
  segments_right?: number;
  k_min?: number;
  k_max?: number;
  denoise_k?: number;
  idempotency_key?: string;
}

export interface ResultEntry {
  rank: number;
  seed: number;
  score: number;
  error?: string | null;
}

export interface JobDoc {
  job_id: string;
  state: JobState;
  created: number;
  progress: { completed: number; total: number };
  results: ResultEntry[];
  error: string | null;
  payload: Record<string, unknown>;
  session_id?: string | null;
}

export interface SessionStepView {
  job: Record<string, unknown>;
  chosen_rank: number | null;
  chosen_png: string | null;
  job_id?: string;
}

export interface SessionView {
  id: string;
  version: string;
  base_png: string;
  canvas_png: string;
  steps: SessionStepView[];
  pending: {
    job_id: string;
    state: JobState;
    progress: { completed: number; total: number };
    error: string | null;
  } | null;
}

export class ApiError extends Error {
  readonly status: number;
  readonly knownPrompts: string[] | null;

  constructor(status: number, message: string, knownPrompts: string[] | null = null) {
    super(message);
    this.status = status;
    this.knownPrompts = knownPrompts;
  }
}

function errorFromBody(status: number, body: unknown): ApiError {
  if (body && typeof body === "object") {
    const doc = body as Record<string, unknown>;
    const message =
      typeof doc.error === "string"
        ? doc.error
        : typeof doc.detail === "string"
          ? doc.detail
          : JSON.stringify(doc.detail ?? doc);
    const known = Array.isArray(doc.known_prompts) ? (doc.known_prompts as string[]) : null;
    return new ApiError(status, message, known);
  }
  return new ApiError(status, `HTTP ${status}`);
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class Api {
  readonly baseUrl: string;
  private readonly fetchFn: FetchFn;

  constructor(baseUrl = "", fetchFn: FetchFn = (...args) => fetch(...args)) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) throw errorFromBody(resp.status, body);
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<{ status: string }> {
    return this.json("/health");
  }

  async lexicon(): Promise<string[]> {
    const doc = await this.json<{ prompts: string[] }>("/api/lexicon");
    return doc.prompts;
  }

  submitEdit(payload: JobPayload): Promise<{ job_id: string; state: JobState }> {
    return this.post("/api/edits", payload);
  }

  getJob(jobId: string): Promise<JobDoc> {
    return this.json(`/api/edits/${jobId}`);
  }

  listJobs(): Promise<{ jobs: Pick<JobDoc, "job_id" | "state" | "created" | "progress">[] }> {
    return this.json("/api/edits");
  }

  /** Raw PNG bytes of one ranked result, exactly as stored by the service. */
  async fetchResult(jobId: string, rank: number): Promise<Uint8Array> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/edits/${jobId}/results/${rank}.png`);
    if (!resp.ok) {
      let body: unknown = null;
      try {
        body = await resp.json();
      } catch {
        body = null;
      }
      throw errorFromBody(resp.status, body);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  createSession(imageB64: string): Promise<{ session_id: string }> {
    return this.post("/api/sessions", { image: imageB64 });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.json(`/api/sessions/${sessionId}`);
  }

  addStep(sessionId: string, payload: JobPayload): Promise<{ job_id: string; session_id: string }> {
    return this.post(`/api/sessions/${sessionId}/steps`, payload);
  }

  choose(sessionId: string, rank: number): Promise<SessionView> {
    return this.post(`/api/sessions/${sessionId}/choose`, { rank });
  }
}

export interface PollOptions {
  intervalMs?: number;
  signal?: AbortSignal;
  onProgress?: (doc: JobDoc) => void;
}

/** Poll a job until it leaves the queue; resolves on done or failed.
 *
 * Rejects with DOMException "AbortError" if the signal fires, so a tab
 * switch can drop a poll loop without special-casing.
 */
export async function pollJob(api: Api, jobId: string, opts: PollOptions = {}): Promise<JobDoc> {
  const interval = opts.intervalMs ?? 1000;
  for (;;) {
    if (opts.signal?.aborted) throw new DOMException("poll aborted", "AbortError");
    const doc = await api.getJob(jobId);
    opts.onProgress?.(doc);
    if (doc.state === "done" || doc.state === "failed") return doc;
    await sleep(interval, opts.signal);
  }
}

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => {
      signal?.removeEventListener("abort", onAbort);
      resolve();
    }, ms);
    function onAbort() {
      clearTimeout(timer);
      reject(new DOMException("poll aborted", "AbortError"));
    }
    signal?.addEventListener("abort", onAbort, { once: true });
  });
}
