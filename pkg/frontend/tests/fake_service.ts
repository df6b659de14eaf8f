/** In-memory stand-in for the job service, wire-compatible for the routes
 * the studio uses. Jobs advance one lifecycle stage per status poll so
 * tests control timing through the poll interval.
 */

import { FetchFn } from "../src/api";
import { encodeGrayPng } from "../src/png";

interface FakeJob {
  id: string;
  payload: Record<string, unknown>;
  polls: number;
  pollsToDone: number;
  results: { rank: number | null; seed: number; score?: number; error?: string }[];
}

interface FakeSession {
  id: string;
  base: string;
  canvas: string;
  steps: Record<string, unknown>[];
  pending: string | null;
}

function json(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class FakeService {
  lexicon = ["bright_red", "deep_blue", "forest_green"];
  sessions = new Map<string, FakeSession>();
  jobs = new Map<string, FakeJob>();
  /** Override the results listing of the next submitted job. */
  nextResults: FakeJob["results"] | null = null;
  /** Poll count at which the next submitted job turns done. */
  nextPollsToDone = 3;
  stepCalls: Record<string, unknown>[] = [];
  private seq = 0;

  resultBytes(jobId: string, rank: number): Uint8Array {
    let h = rank * 37;
    for (const ch of jobId) h = (h * 31 + ch.charCodeAt(0)) % 251;
    return encodeGrayPng(6, 4, new Uint8Array(24).fill(h));
  }

  private jobState(job: FakeJob): { state: string; completed: number } {
    const total = Number(job.payload.num_samples ?? 1);
    if (job.polls >= job.pollsToDone) return { state: "done", completed: total };
    if (job.polls >= 2) return { state: "running", completed: Math.min(1, total) };
    return { state: "queued", completed: 0 };
  }

  private jobDoc(job: FakeJob): Record<string, unknown> {
    const { state, completed } = this.jobState(job);
    const total = Number(job.payload.num_samples ?? 1);
    const publicPayload = { ...job.payload };
    for (const key of ["image", "mask", "scribble_image", "scribble_mask"]) {
      delete publicPayload[key];
    }
    return {
      job_id: job.id,
      state,
      created: 0,
      progress: { completed, total },
      results: state === "done" ? job.results : [],
      error: null,
      payload: publicPayload,
    };
  }

  private sessionView(s: FakeSession): Record<string, unknown> {
    let pending = null;
    if (s.pending) {
      const job = this.jobs.get(s.pending) as FakeJob;
      const { state, completed } = this.jobState(job);
      pending = {
        job_id: job.id,
        state,
        progress: { completed, total: Number(job.payload.num_samples ?? 1) },
        error: null,
      };
    }
    return {
      id: s.id,
      version: "bdses/1",
      base_png: s.base,
      canvas_png: s.canvas,
      steps: s.steps,
      pending,
    };
  }

  private unknownPrompt(payload: Record<string, unknown>): string | null {
    for (const key of ["prompt", "prompt_left", "prompt_right"]) {
      const p = (payload[key] as string) || "";
      if (p && !this.lexicon.includes(p)) return `${key}: unknown prompt '${p}'`;
    }
    return null;
  }

  private makeJob(payload: Record<string, unknown>): FakeJob {
    const id = `job${++this.seq}`;
    const total = Number(payload.num_samples ?? 1);
    const results =
      this.nextResults ??
      Array.from({ length: total }, (_, i) => ({
        rank: i + 1,
        seed: Number(payload.seed ?? 0) + i,
        score: -0.1 * (i + 1),
      }));
    this.nextResults = null;
    const job: FakeJob = {
      id,
      payload,
      polls: 0,
      pollsToDone: this.nextPollsToDone,
      results,
    };
    this.nextPollsToDone = 3;
    this.jobs.set(id, job);
    return job;
  }

  fetchFn: FetchFn = async (url, init) => {
    const { pathname } = new URL(url);
    const method = init?.method ?? "GET";
    const body = init?.body ? (JSON.parse(init.body as string) as Record<string, unknown>) : {};
    let m: RegExpExecArray | null;

    if (method === "GET" && pathname === "/health") return json({ status: "ok" });
    if (method === "GET" && pathname === "/api/lexicon") return json({ prompts: this.lexicon });

    if (method === "POST" && pathname === "/api/sessions") {
      if (!body.image) return json({ error: "missing required field 'image'" }, 400);
      const id = `ses${++this.seq}`;
      this.sessions.set(id, {
        id,
        base: body.image as string,
        canvas: body.image as string,
        steps: [],
        pending: null,
      });
      return json({ session_id: id }, 201);
    }

    if ((m = /^\/api\/sessions\/([^/]+)$/.exec(pathname)) && method === "GET") {
      const s = this.sessions.get(m[1]);
      return s ? json(this.sessionView(s)) : json({ error: `no session '${m[1]}'` }, 404);
    }

    if ((m = /^\/api\/sessions\/([^/]+)\/steps$/.exec(pathname)) && method === "POST") {
      const s = this.sessions.get(m[1]);
      if (!s) return json({ error: `no session '${m[1]}'` }, 404);
      if (body.image) return json({ error: "omit 'image' on session steps" }, 400);
      if (s.pending) return json({ error: "session already has a step in flight" }, 409);
      const bad = this.unknownPrompt(body);
      if (bad) return json({ error: bad, known_prompts: this.lexicon }, 422);
      this.stepCalls.push(body);
      const job = this.makeJob(body);
      s.pending = job.id;
      return json({ job_id: job.id, session_id: s.id }, 202);
    }

    if ((m = /^\/api\/sessions\/([^/]+)\/choose$/.exec(pathname)) && method === "POST") {
      const s = this.sessions.get(m[1]);
      if (!s) return json({ error: `no session '${m[1]}'` }, 404);
      if (!s.pending) return json({ error: "session has no step awaiting a choice" }, 409);
      const job = this.jobs.get(s.pending) as FakeJob;
      if (this.jobState(job).state !== "done") {
        return json({ error: "cannot choose from a job that has not finished" }, 409);
      }
      const rank = body.rank as number;
      if (!job.results.some((r) => r.rank === rank)) {
        const have = job.results.map((r) => r.rank).filter((r) => r != null);
        return json({ error: `no result with rank ${rank}; have [${have}]` }, 422);
      }
      const chosen = Buffer.from(this.resultBytes(job.id, rank)).toString("base64");
      s.steps.push({ job: job.payload, chosen_rank: rank, chosen_png: chosen, job_id: job.id });
      s.canvas = chosen;
      s.pending = null;
      return json(this.sessionView(s));
    }

    if ((m = /^\/api\/edits\/([^/]+)$/.exec(pathname)) && method === "GET") {
      const job = this.jobs.get(m[1]);
      if (!job) return json({ error: `no job '${m[1]}'` }, 404);
      job.polls++;
      return json(this.jobDoc(job));
    }

    if ((m = /^\/api\/edits\/([^/]+)\/results\/(\d+)\.png$/.exec(pathname)) && method === "GET") {
      const job = this.jobs.get(m[1]);
      if (!job || this.jobState(job).state !== "done") {
        return json({ error: "no such result" }, 404);
      }
      return new Response(this.resultBytes(job.id, Number(m[2])).slice());
    }

    return json({ error: `unrouted ${method} ${pathname}` }, 500);
  };
}
