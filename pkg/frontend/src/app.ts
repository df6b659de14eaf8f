/** The studio single-page app.
 *
 * One session per loaded image: every submission is a session step, every
 * "use this result" a choose call, so the server owns the edit chain. The
 * app keeps raw PNG bytes for everything it shows and renders them through
 * data: URLs; pixels are never decoded, composited, or re-encoded on the
 * way to the screen. Mask and scribble overlays live on separate canvas
 * elements stacked above the image.
 *
 * One job may be in flight at a time; its status is polled once a second
 * and the poll loop is dropped on page navigation. Re-opening a session
 * with a pending step re-attaches to that job.
 */

import {
  Api,
  ApiError,
  Application,
  JobDoc,
  JobPayload,
  pollJob,
  SessionView,
} from "./api";
import { CanvasState, Rgb, StrokeEvent } from "./canvas_state";
import { base64ToBytes, bytesToBase64, pngDataUrl, readPngInfo } from "./png";

export type Tab = "edit" | "scribble" | "extrapolate" | "compare";
export type Tool = "brush" | "erase" | "scribble" | "scribble-erase" | "pan";

export interface ResultCard {
  rank: number;
  seed: number;
  score: number;
  bytes: Uint8Array;
}

export interface AppOptions {
  /** Job status poll period; production default is 1 s. */
  pollIntervalMs?: number;
}

const SAMPLERS = ["blended", "local_guided", "ddim_blended", "naive_blend"] as const;

const SCRIBBLE_PALETTE: Rgb[] = [
  [220, 50, 40],
  [60, 160, 75],
  [55, 110, 215],
  [235, 200, 60],
  [245, 245, 245],
  [25, 25, 25],
];

export class App {
  readonly api: Api;
  readonly root: HTMLElement;
  readonly pollIntervalMs: number;
  /** Resolves once the lexicon has been fetched (or failed with an inline error). */
  readonly ready: Promise<void>;

  lexicon: string[] = [];
  sessionId: string | null = null;
  sessionSteps = 0;
  /** Step-0 image of the session, as served. */
  basePngBytes: Uint8Array | null = null;
  /** Current session canvas, as served; the next step's source. */
  canvasPngBytes: Uint8Array | null = null;
  canvas: CanvasState | null = null;

  tab: Tab = "edit";
  tool: Tool = "brush";
  brushRadius = 6;
  scribbleColor: Rgb = SCRIBBLE_PALETTE[0];

  results: ResultCard[] | null = null;
  resultsJobId: string | null = null;
  resultsWide = false;
  failedSamples: string[] = [];
  inFlightJobId: string | null = null;
  progress = { completed: 0, total: 0 };
  errorMessage: string | null = null;
  errorPrompts: string[] | null = null;

  private pollAbort: AbortController | null = null;
  private refs = new Map<string, HTMLElement>();
  private stroking = false;
  private panning = false;
  private lastImagePoint: [number, number] | null = null;
  private lastScreenPoint: [number, number] | null = null;

  constructor(root: HTMLElement, api: Api, opts: AppOptions = {}) {
    this.root = root;
    this.api = api;
    this.pollIntervalMs = opts.pollIntervalMs ?? 1000;
    this.buildDom();
    this.bindEvents();
    this.renderAll();
    this.ready = this.boot();
  }

  private async boot(): Promise<void> {
    await this.loadLexicon();
    // #s=<id> in the URL resumes that session, re-attaching to a pending
    // step if one is in flight, so a reload does not orphan the job.
    // Session ids are opaque here; the service decides what exists.
    const match = /^#s=([\w-]+)$/.exec(window.location.hash ?? "");
    if (!match) return;
    try {
      const view = await this.api.getSession(match[1]);
      this.applySessionView(view, { resetResults: true });
    } catch {
      window.location.hash = "";
    }
  }

  // ----- DOM scaffolding -----

  private ref<T extends HTMLElement = HTMLElement>(name: string): T {
    const el = this.refs.get(name);
    if (!el) throw new Error(`no element ref ${name}`);
    return el as T;
  }

  private buildDom(): void {
    this.root.innerHTML = `
      <header class="topbar">
        <h1>blendiff studio</h1>
        <span class="session-info" data-ref="sessionInfo"></span>
      </header>
      <div class="error-box hidden" data-ref="errorBox" role="alert"></div>
      <main class="layout">
        <aside class="side">
          <section class="box">
            <label class="file-label">open PNG
              <input type="file" accept="image/png" data-ref="fileInput">
            </label>
            <button type="button" data-ref="newSessionBtn" disabled
              title="Start a fresh session whose base is the current canvas; drops unchosen results.">
              restart session from canvas</button>
          </section>
          <section class="box tools">
            <div class="tool-row" data-ref="toolRow">
              <button type="button" data-tool="brush" class="tool active">brush</button>
              <button type="button" data-tool="erase" class="tool">erase</button>
              <button type="button" data-tool="scribble" class="tool">scribble</button>
              <button type="button" data-tool="scribble-erase" class="tool">scrib-erase</button>
              <button type="button" data-tool="pan" class="tool">pan</button>
            </div>
            <label>radius <input type="range" min="1" max="40" value="6" data-ref="radiusInput">
              <span data-ref="radiusValue">6</span></label>
            <div class="palette" data-ref="palette"></div>
            <div class="tool-row">
              <button type="button" data-ref="clearMaskBtn">clear mask</button>
              <button type="button" data-ref="clearScribbleBtn">clear scribble</button>
            </div>
            <label><input type="checkbox" data-ref="autoMaskToggle"> preview auto-mask (dilated scribble)</label>
          </section>
          <nav class="tabs" data-ref="tabs">
            <button type="button" data-tab="edit" class="active">edit</button>
            <button type="button" data-tab="scribble">scribble</button>
            <button type="button" data-tab="extrapolate">extrapolate</button>
            <button type="button" data-tab="compare">compare</button>
          </nav>
          <section class="box panel" data-ref="editPanel">
            <label>prompt <input data-ref="editPrompt" list="lexicon-list" autocomplete="off"
              placeholder="pick from lexicon; empty removes"></label>
            <span class="inpaint-note hidden" data-ref="editInpaintNote">inpaint (no prompt)</span>
            <label><input type="radio" name="editmode" value="object_edit" checked
              data-ref="modeObject"> edit the painted region</label>
            <label><input type="radio" name="editmode" value="background_replace"
              data-ref="modeBackground"> keep painted region, replace the rest</label>
            <label>sampler <select data-ref="editSampler"></select></label>
            <label>k (noise depth) <input type="number" data-ref="editK" value="20" min="1"></label>
            <label>lambda (background pull) <input type="number" data-ref="editLambda" value="1000" min="0"></label>
            <label>N (augmentations) <input type="number" data-ref="editNAug" value="4" min="1"></label>
            <label>samples <input type="number" data-ref="editSamples" value="4" min="1" max="64"></label>
            <label>seed <input type="number" data-ref="editSeed" value="0"></label>
            <button type="button" class="submit" data-ref="editSubmit">run edit</button>
          </section>
          <section class="box panel hidden" data-ref="scribblePanel">
            <label>prompt <input data-ref="scribblePrompt" list="lexicon-list" autocomplete="off"
              placeholder="pick from lexicon; empty removes"></label>
            <span class="inpaint-note hidden" data-ref="scribbleInpaintNote">inpaint (no prompt)</span>
            <label>dilate radius <input type="number" data-ref="scribbleDilate" value="3" min="0"></label>
            <p class="hint">edit region = painted mask if any, else the scribble dilated by this radius</p>
            <label>k (noise depth) <input type="number" data-ref="scribbleK" value="20" min="1"></label>
            <label>samples <input type="number" data-ref="scribbleSamples" value="4" min="1" max="64"></label>
            <label>seed <input type="number" data-ref="scribbleSeed" value="0"></label>
            <button type="button" class="submit" data-ref="scribbleSubmit">run scribble</button>
          </section>
          <section class="box panel hidden" data-ref="extrapolatePanel">
            <label>segments left <input type="number" data-ref="extraLeft" value="0" min="0" max="8"></label>
            <label>prompt left <input data-ref="extraPromptLeft" list="lexicon-list" autocomplete="off"></label>
            <label>segments right <input type="number" data-ref="extraRight" value="1" min="0" max="8"></label>
            <label>prompt right <input data-ref="extraPromptRight" list="lexicon-list" autocomplete="off"></label>
            <label>k min <input type="number" data-ref="extraKMin" value="40" min="1"></label>
            <label>k max <input type="number" data-ref="extraKMax" value="75" min="1"></label>
            <label>final denoise k <input type="number" data-ref="extraDenoiseK" value="30" min="1"></label>
            <label>seed <input type="number" data-ref="extraSeed" value="0"></label>
            <button type="button" class="submit" data-ref="extrapolateSubmit">run extrapolation</button>
          </section>
          <section class="box panel hidden" data-ref="comparePanel">
            <label>left <select data-ref="compareA"></select></label>
            <label>right <select data-ref="compareB"></select></label>
            <label><input type="checkbox" data-ref="compareOverlay"> mask overlay</label>
          </section>
          <div class="job-status" data-ref="jobStatus"></div>
        </aside>
        <section class="center">
          <div class="viewport" data-ref="viewport">
            <div class="stack" data-ref="stack">
              <img data-ref="baseImg" alt="session canvas" draggable="false">
              <canvas class="overlay" data-ref="maskCanvas"></canvas>
              <canvas class="overlay" data-ref="scribbleCanvas"></canvas>
              <canvas class="overlay" data-ref="autoMaskCanvas"></canvas>
            </div>
            <p class="placeholder" data-ref="placeholder">open a PNG to start a session</p>
          </div>
          <div class="results-head">
            <h2>results</h2>
            <span data-ref="resultsNote"></span>
          </div>
          <div class="gallery" data-ref="gallery"></div>
          <div class="compare-view hidden" data-ref="compareView"></div>
        </section>
      </main>
      <datalist id="lexicon-list" data-ref="lexiconList"></datalist>
    `;
    for (const el of this.root.querySelectorAll<HTMLElement>("[data-ref]")) {
      this.refs.set(el.dataset.ref as string, el);
    }
    const samplerSel = this.ref<HTMLSelectElement>("editSampler");
    for (const name of SAMPLERS) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      samplerSel.appendChild(opt);
    }
    const palette = this.ref("palette");
    SCRIBBLE_PALETTE.forEach((rgb, i) => {
      const b = document.createElement("button");
      b.type = "button";
      b.className = "swatch" + (i === 0 ? " active" : "");
      b.style.background = `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
      b.dataset.color = rgb.join(",");
      b.title = `scribble color rgb(${rgb.join(",")})`;
      palette.appendChild(b);
    });
  }

  private bindEvents(): void {
    this.ref<HTMLInputElement>("fileInput").addEventListener("change", (e) => {
      const input = e.target as HTMLInputElement;
      const file = input.files?.[0];
      if (!file) return;
      void file.arrayBuffer().then((buf) => this.openImage(new Uint8Array(buf)));
    });
    this.ref("newSessionBtn").addEventListener("click", () => {
      void this.restartSessionFromCanvas();
    });
    this.ref("toolRow").addEventListener("click", (e) => {
      const btn = (e.target as HTMLElement).closest<HTMLElement>("[data-tool]");
      if (btn) this.setTool(btn.dataset.tool as Tool);
    });
    this.ref<HTMLInputElement>("radiusInput").addEventListener("input", (e) => {
      this.brushRadius = Number((e.target as HTMLInputElement).value);
      this.ref("radiusValue").textContent = String(this.brushRadius);
    });
    this.ref("palette").addEventListener("click", (e) => {
      const btn = (e.target as HTMLElement).closest<HTMLElement>(".swatch");
      if (!btn) return;
      this.scribbleColor = btn.dataset.color!.split(",").map(Number) as Rgb;
      for (const s of this.ref("palette").children) s.classList.toggle("active", s === btn);
    });
    this.ref("clearMaskBtn").addEventListener("click", () => {
      if (!this.canvas) return;
      this.canvas.clearMask();
      this.repaintMask();
      this.renderCompare();
    });
    this.ref("clearScribbleBtn").addEventListener("click", () => {
      if (!this.canvas) return;
      this.canvas.clearScribble();
      this.repaintScribble();
      this.repaintAutoMask();
    });
    this.ref<HTMLInputElement>("autoMaskToggle").addEventListener("change", () => {
      this.repaintAutoMask();
    });
    this.ref("tabs").addEventListener("click", (e) => {
      const btn = (e.target as HTMLElement).closest<HTMLElement>("[data-tab]");
      if (btn) this.setTab(btn.dataset.tab as Tab);
    });
    this.ref("editSubmit").addEventListener("click", () => void this.submitEdit());
    this.ref("scribbleSubmit").addEventListener("click", () => void this.submitScribble());
    this.ref("extrapolateSubmit").addEventListener("click", () => void this.submitExtrapolate());
    for (const name of ["editPrompt", "scribblePrompt"]) {
      this.ref<HTMLInputElement>(name).addEventListener("input", () => this.renderInpaintNotes());
    }
    for (const name of ["compareA", "compareB", "compareOverlay"]) {
      this.ref(name).addEventListener("change", () => this.renderCompare());
    }
    this.ref("gallery").addEventListener("click", (e) => {
      const btn = (e.target as HTMLElement).closest<HTMLElement>("[data-use-rank]");
      if (btn) void this.useResult(Number(btn.dataset.useRank));
    });
    this.ref("scribbleDilate").addEventListener("input", () => this.repaintAutoMask());

    const viewport = this.ref("viewport");
    viewport.addEventListener("pointerdown", (e) => this.onPointerDown(e as PointerEvent));
    viewport.addEventListener("pointermove", (e) => this.onPointerMove(e as PointerEvent));
    viewport.addEventListener("pointerup", (e) => this.onPointerUp(e as PointerEvent));
    viewport.addEventListener("pointercancel", (e) => this.onPointerUp(e as PointerEvent));
    viewport.addEventListener("wheel", (e) => this.onWheel(e), { passive: false });

    // navigating away drops the poll loop; the job itself keeps running
    window.addEventListener("pagehide", () => this.pollAbort?.abort());
  }

  // ----- lexicon -----

  private async loadLexicon(): Promise<void> {
    try {
      this.lexicon = await this.api.lexicon();
      const list = this.ref("lexiconList");
      list.innerHTML = "";
      for (const prompt of this.lexicon) {
        const opt = document.createElement("option");
        opt.value = prompt;
        list.appendChild(opt);
      }
    } catch (exc) {
      this.showError(`cannot reach the service: ${(exc as Error).message}`);
    }
  }

  // ----- session plumbing -----

  async openImage(bytes: Uint8Array): Promise<void> {
    this.clearError();
    try {
      readPngInfo(bytes);
    } catch (exc) {
      this.showError(`not a usable PNG: ${(exc as Error).message}`);
      return;
    }
    try {
      const { session_id } = await this.api.createSession(bytesToBase64(bytes));
      const view = await this.api.getSession(session_id);
      this.applySessionView(view, { resetResults: true });
    } catch (exc) {
      this.surfaceApiError(exc);
    }
  }

  /** Fresh session whose base is the current canvas; how unwanted results
   * are abandoned, since a pending step can only be resolved by choosing. */
  async restartSessionFromCanvas(): Promise<void> {
    if (!this.canvasPngBytes) return;
    this.clearError();
    this.pollAbort?.abort();
    this.inFlightJobId = null;
    try {
      const { session_id } = await this.api.createSession(bytesToBase64(this.canvasPngBytes));
      const view = await this.api.getSession(session_id);
      this.applySessionView(view, { resetResults: true });
    } catch (exc) {
      this.surfaceApiError(exc);
    }
  }

  applySessionView(view: SessionView, opts: { resetResults: boolean }): void {
    this.sessionId = view.id;
    window.location.hash = `#s=${view.id}`;
    this.sessionSteps = view.steps.length;
    this.basePngBytes = base64ToBytes(view.base_png);
    this.canvasPngBytes = base64ToBytes(view.canvas_png);
    this.canvas = new CanvasState(this.canvasPngBytes);
    if (opts.resetResults) {
      this.results = null;
      this.resultsJobId = null;
      this.failedSamples = [];
    }
    this.renderAll();
    if (view.pending && !this.inFlightJobId) {
      this.attachJob(view.pending.job_id);
    }
  }

  // ----- submission -----

  private promptInLexicon(prompt: string): boolean {
    return prompt === "" || this.lexicon.includes(prompt);
  }

  private rejectUnknownPrompt(prompt: string): boolean {
    if (this.promptInLexicon(prompt)) return false;
    this.showError(`unknown prompt ${JSON.stringify(prompt)}; pick one of the lexicon prompts`, [
      ...this.lexicon,
    ]);
    return true;
  }

  private canSubmit(): boolean {
    if (!this.sessionId || !this.canvas) {
      this.showError("open an image first");
      return false;
    }
    if (this.inFlightJobId) {
      this.showError("a job is already in flight; wait for it or restart the session");
      return false;
    }
    return true;
  }

  async submitEdit(): Promise<void> {
    if (!this.canSubmit()) return;
    const canvas = this.canvas as CanvasState;
    const prompt = this.ref<HTMLInputElement>("editPrompt").value.trim();
    if (this.rejectUnknownPrompt(prompt)) return;
    if (!canvas.hasMask()) {
      this.showError("paint a mask first (brush tool)");
      return;
    }
    const background = this.ref<HTMLInputElement>("modeBackground").checked;
    const payload: JobPayload = {
      application: background ? "background_replace" : "object_edit",
      prompt,
      mask: bytesToBase64(canvas.exportMaskPng(background)),
      sampler: this.ref<HTMLSelectElement>("editSampler").value as JobPayload["sampler"],
      k: this.num("editK"),
      lambda: this.num("editLambda"),
      n_aug: this.num("editNAug"),
      num_samples: this.num("editSamples"),
      seed: this.num("editSeed"),
    };
    await this.submitStep(payload);
  }

  async submitScribble(): Promise<void> {
    if (!this.canSubmit()) return;
    const canvas = this.canvas as CanvasState;
    const prompt = this.ref<HTMLInputElement>("scribblePrompt").value.trim();
    if (this.rejectUnknownPrompt(prompt)) return;
    if (!canvas.hasScribble()) {
      this.showError("draw a scribble first (scribble tool)");
      return;
    }
    const payload: JobPayload = {
      application: "scribble",
      prompt,
      scribble_image: bytesToBase64(canvas.exportScribblePng()),
      scribble_mask: bytesToBase64(canvas.exportScribbleMaskPng()),
      dilate_radius: this.num("scribbleDilate"),
      k: this.num("scribbleK"),
      num_samples: this.num("scribbleSamples"),
      seed: this.num("scribbleSeed"),
    };
    if (canvas.hasMask()) payload.mask = bytesToBase64(canvas.exportMaskPng());
    await this.submitStep(payload);
  }

  async submitExtrapolate(): Promise<void> {
    if (!this.canSubmit()) return;
    const promptLeft = this.ref<HTMLInputElement>("extraPromptLeft").value.trim();
    const promptRight = this.ref<HTMLInputElement>("extraPromptRight").value.trim();
    if (this.rejectUnknownPrompt(promptLeft) || this.rejectUnknownPrompt(promptRight)) return;
    const payload: JobPayload = {
      application: "extrapolate",
      prompt_left: promptLeft,
      prompt_right: promptRight,
      segments_left: this.num("extraLeft"),
      segments_right: this.num("extraRight"),
      k_min: this.num("extraKMin"),
      k_max: this.num("extraKMax"),
      denoise_k: this.num("extraDenoiseK"),
      seed: this.num("extraSeed"),
    };
    await this.submitStep(payload);
  }

  private num(refName: string): number {
    return Number(this.ref<HTMLInputElement>(refName).value);
  }

  private async submitStep(payload: JobPayload): Promise<void> {
    this.clearError();
    try {
      const { job_id } = await this.api.addStep(this.sessionId as string, payload);
      this.results = null;
      this.resultsJobId = null;
      this.failedSamples = [];
      this.resultsWide = payload.application === "extrapolate";
      this.renderGallery();
      this.attachJob(job_id);
    } catch (exc) {
      this.surfaceApiError(exc);
    }
  }

  /** Start (or re-start) polling a job and load its results when done. */
  private attachJob(jobId: string): void {
    this.inFlightJobId = jobId;
    this.progress = { completed: 0, total: 0 };
    this.renderJobStatus();
    this.renderSubmitButtons();
    this.pollAbort?.abort();
    const abort = new AbortController();
    this.pollAbort = abort;
    void pollJob(this.api, jobId, {
      intervalMs: this.pollIntervalMs,
      signal: abort.signal,
      onProgress: (doc) => {
        this.progress = doc.progress;
        this.renderJobStatus();
      },
    })
      .then((doc) => this.onJobSettled(doc))
      .catch((exc: unknown) => {
        if ((exc as DOMException).name === "AbortError") return;
        this.inFlightJobId = null;
        this.renderJobStatus();
        this.renderSubmitButtons();
        this.surfaceApiError(exc);
      });
  }

  private async onJobSettled(doc: JobDoc): Promise<void> {
    this.inFlightJobId = null;
    this.renderSubmitButtons();
    if (doc.state === "failed") {
      this.renderJobStatus();
      this.showError(`job ${doc.job_id} failed: ${doc.error ?? "unknown error"}`);
      return;
    }
    try {
      const cards: ResultCard[] = [];
      const failed: string[] = [];
      // gallery order is exactly the service's results order; no re-sorting
      for (const entry of doc.results) {
        if (entry.rank == null) {
          failed.push(`seed ${entry.seed}: ${entry.error ?? "failed"}`);
          continue;
        }
        const bytes = await this.api.fetchResult(doc.job_id, entry.rank);
        cards.push({ rank: entry.rank, seed: entry.seed, score: entry.score, bytes });
      }
      this.results = cards;
      this.resultsJobId = doc.job_id;
      this.failedSamples = failed;
      this.resultsWide = (doc.payload as { application?: Application }).application === "extrapolate";
      this.renderJobStatus();
      this.renderGallery();
      this.renderComparePanel();
      this.renderCompare();
    } catch (exc) {
      this.surfaceApiError(exc);
    }
  }

  async useResult(rank: number): Promise<void> {
    if (!this.sessionId) return;
    this.clearError();
    try {
      const view = await this.api.choose(this.sessionId, rank);
      this.applySessionView(view, { resetResults: true });
    } catch (exc) {
      this.surfaceApiError(exc);
    }
  }

  // ----- tools, tabs, pointer handling -----

  setTool(tool: Tool): void {
    this.tool = tool;
    for (const btn of this.ref("toolRow").querySelectorAll("[data-tool]")) {
      btn.classList.toggle("active", (btn as HTMLElement).dataset.tool === tool);
    }
  }

  setTab(tab: Tab): void {
    this.tab = tab;
    for (const btn of this.ref("tabs").querySelectorAll("[data-tab]")) {
      btn.classList.toggle("active", (btn as HTMLElement).dataset.tab === tab);
    }
    const panels: Record<Tab, string> = {
      edit: "editPanel",
      scribble: "scribblePanel",
      extrapolate: "extrapolatePanel",
      compare: "comparePanel",
    };
    for (const name of Object.values(panels)) {
      this.ref(name).classList.toggle("hidden", name !== panels[tab]);
    }
    this.ref("gallery").classList.toggle("hidden", tab === "compare");
    this.ref("compareView").classList.toggle("hidden", tab !== "compare");
    if (tab === "compare") {
      this.renderComparePanel();
      this.renderCompare();
    }
    this.repaintAutoMask();
  }

  /** Apply one stroke programmatically; the pointer handlers funnel here. */
  paintStroke(ev: StrokeEvent): void {
    if (!this.canvas) return;
    this.canvas.paint(ev);
    if (ev.layer === "mask") this.repaintMask();
    else {
      this.repaintScribble();
      this.repaintAutoMask();
    }
  }

  private strokeEventFor(points: [number, number][]): StrokeEvent | null {
    switch (this.tool) {
      case "brush":
        return { layer: "mask", erase: false, radius: this.brushRadius, points };
      case "erase":
        return { layer: "mask", erase: true, radius: this.brushRadius, points };
      case "scribble":
        return {
          layer: "scribble",
          erase: false,
          radius: this.brushRadius,
          color: this.scribbleColor,
          points,
        };
      case "scribble-erase":
        return { layer: "scribble", erase: true, radius: this.brushRadius, points };
      case "pan":
        return null;
    }
  }

  private imagePoint(e: PointerEvent): [number, number] {
    const rect = this.ref("viewport").getBoundingClientRect();
    return (this.canvas as CanvasState).screenToImage(e.clientX, e.clientY, rect.left, rect.top);
  }

  private onPointerDown(e: PointerEvent): void {
    if (!this.canvas) return;
    try {
      (e.target as HTMLElement).setPointerCapture?.(e.pointerId);
    } catch {
      // test DOMs reject capture for synthetic pointers; drawing works anyway
    }
    if (this.tool === "pan" || e.button === 1) {
      this.panning = true;
      this.lastScreenPoint = [e.clientX, e.clientY];
      return;
    }
    if (e.button !== 0) return;
    this.stroking = true;
    const p = this.imagePoint(e);
    this.lastImagePoint = p;
    const ev = this.strokeEventFor([p]);
    if (ev) this.paintStroke(ev);
  }

  private onPointerMove(e: PointerEvent): void {
    if (!this.canvas) return;
    if (this.panning && this.lastScreenPoint) {
      this.canvas.panBy(e.clientX - this.lastScreenPoint[0], e.clientY - this.lastScreenPoint[1]);
      this.lastScreenPoint = [e.clientX, e.clientY];
      this.applyStackTransform();
      return;
    }
    if (!this.stroking || !this.lastImagePoint) return;
    const p = this.imagePoint(e);
    const ev = this.strokeEventFor([this.lastImagePoint, p]);
    this.lastImagePoint = p;
    if (ev) this.paintStroke(ev);
  }

  private onPointerUp(_e: PointerEvent): void {
    this.stroking = false;
    this.panning = false;
    this.lastImagePoint = null;
    this.lastScreenPoint = null;
  }

  private onWheel(e: WheelEvent): void {
    if (!this.canvas) return;
    e.preventDefault();
    const rect = this.ref("viewport").getBoundingClientRect();
    this.canvas.zoomAt(e.deltaY < 0 ? 1.25 : 0.8, e.clientX, e.clientY, rect.left, rect.top);
    this.applyStackTransform();
  }

  // ----- rendering -----

  private renderAll(): void {
    this.renderSessionInfo();
    this.renderStack();
    this.renderJobStatus();
    this.renderSubmitButtons();
    this.renderGallery();
    this.renderComparePanel();
    this.renderCompare();
    this.renderInpaintNotes();
  }

  private renderSessionInfo(): void {
    const el = this.ref("sessionInfo");
    if (!this.sessionId || !this.canvas) {
      el.textContent = "no session";
    } else {
      el.textContent =
        `session ${this.sessionId} · step ${this.sessionSteps + 1} · ` +
        `${this.canvas.width}×${this.canvas.height}`;
    }
    (this.ref("newSessionBtn") as HTMLButtonElement).disabled = !this.sessionId;
  }

  private renderStack(): void {
    const has = this.canvas !== null && this.canvasPngBytes !== null;
    this.ref("stack").classList.toggle("hidden", !has);
    this.ref("placeholder").classList.toggle("hidden", has);
    if (!has) return;
    const canvas = this.canvas as CanvasState;
    const img = this.ref<HTMLImageElement>("baseImg");
    img.src = pngDataUrl(this.canvasPngBytes as Uint8Array);
    img.width = canvas.width;
    img.height = canvas.height;
    for (const name of ["maskCanvas", "scribbleCanvas", "autoMaskCanvas"]) {
      const el = this.ref<HTMLCanvasElement>(name);
      el.width = canvas.width;
      el.height = canvas.height;
    }
    const stack = this.ref("stack");
    stack.style.width = `${canvas.width}px`;
    stack.style.height = `${canvas.height}px`;
    this.applyStackTransform();
    this.repaintMask();
    this.repaintScribble();
    this.repaintAutoMask();
  }

  private applyStackTransform(): void {
    if (!this.canvas) return;
    this.ref("stack").style.transform =
      `translate(${this.canvas.panX}px, ${this.canvas.panY}px) scale(${this.canvas.zoom})`;
  }

  private overlayContext(name: string): CanvasRenderingContext2D | null {
    return context2d(this.ref<HTMLCanvasElement>(name));
  }

  private repaintMask(): void {
    const ctx = this.overlayContext("maskCanvas");
    if (!ctx || !this.canvas) return;
    const { width, height, mask } = this.canvas;
    const data = new ImageData(width, height);
    for (let i = 0; i < mask.length; i++) {
      if (!mask[i]) continue;
      data.data[i * 4] = 255;
      data.data[i * 4 + 1] = 50;
      data.data[i * 4 + 2] = 50;
      data.data[i * 4 + 3] = 110;
    }
    ctx.clearRect(0, 0, width, height);
    ctx.putImageData(data, 0, 0);
  }

  private repaintScribble(): void {
    const ctx = this.overlayContext("scribbleCanvas");
    if (!ctx || !this.canvas) return;
    const { width, height, scribbleAlpha, scribbleColor } = this.canvas;
    const data = new ImageData(width, height);
    for (let i = 0; i < scribbleAlpha.length; i++) {
      if (!scribbleAlpha[i]) continue;
      data.data[i * 4] = scribbleColor[i * 3];
      data.data[i * 4 + 1] = scribbleColor[i * 3 + 1];
      data.data[i * 4 + 2] = scribbleColor[i * 3 + 2];
      data.data[i * 4 + 3] = 235;
    }
    ctx.clearRect(0, 0, width, height);
    ctx.putImageData(data, 0, 0);
  }

  private repaintAutoMask(): void {
    const ctx = this.overlayContext("autoMaskCanvas");
    if (!ctx || !this.canvas) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    const enabled = this.ref<HTMLInputElement>("autoMaskToggle").checked;
    if (!enabled || !this.canvas.hasScribble()) return;
    const dilated = this.canvas.autoMask(this.num("scribbleDilate"));
    const data = new ImageData(width, height);
    for (let i = 0; i < dilated.length; i++) {
      if (!dilated[i]) continue;
      data.data[i * 4] = 255;
      data.data[i * 4 + 1] = 165;
      data.data[i * 4 + 2] = 0;
      data.data[i * 4 + 3] = 80;
    }
    ctx.putImageData(data, 0, 0);
  }

  private renderJobStatus(): void {
    const el = this.ref("jobStatus");
    if (!this.inFlightJobId) {
      el.textContent = this.resultsJobId ? `job ${this.resultsJobId} done` : "";
      return;
    }
    const { completed, total } = this.progress;
    el.innerHTML = "";
    const label = document.createElement("div");
    label.textContent = `job ${this.inFlightJobId} · ${completed}/${total || "?"} samples`;
    const bar = document.createElement("progress");
    bar.max = Math.max(total, 1);
    bar.value = completed;
    el.append(label, bar);
  }

  private renderSubmitButtons(): void {
    const busy = this.inFlightJobId !== null;
    for (const name of ["editSubmit", "scribbleSubmit", "extrapolateSubmit"]) {
      (this.ref(name) as HTMLButtonElement).disabled = busy;
    }
  }

  private renderInpaintNotes(): void {
    const pairs: [string, string][] = [
      ["editPrompt", "editInpaintNote"],
      ["scribblePrompt", "scribbleInpaintNote"],
    ];
    for (const [input, note] of pairs) {
      const empty = this.ref<HTMLInputElement>(input).value.trim() === "";
      this.ref(note).classList.toggle("hidden", !empty);
    }
  }

  private renderGallery(): void {
    const gallery = this.ref("gallery");
    gallery.innerHTML = "";
    gallery.classList.toggle("wide", this.resultsWide);
    const note = this.ref("resultsNote");
    if (!this.results) {
      note.textContent = this.inFlightJobId ? "waiting for the job…" : "";
      return;
    }
    note.textContent = `job ${this.resultsJobId} · ${this.results.length} image(s)` +
      (this.failedSamples.length ? ` · ${this.failedSamples.length} failed` : "");
    for (const card of this.results) {
      const fig = document.createElement("figure");
      fig.className = "card";
      const img = document.createElement("img");
      img.src = pngDataUrl(card.bytes);
      img.alt = `result rank ${card.rank}`;
      img.dataset.rank = String(card.rank);
      const cap = document.createElement("figcaption");
      cap.textContent = `rank ${card.rank} · score ${card.score.toFixed(4)} · seed ${card.seed}`;
      const use = document.createElement("button");
      use.type = "button";
      use.textContent = "use this result";
      use.dataset.useRank = String(card.rank);
      fig.append(img, cap, use);
      gallery.appendChild(fig);
    }
    for (const failure of this.failedSamples) {
      const chip = document.createElement("p");
      chip.className = "failed-sample";
      chip.textContent = failure;
      gallery.appendChild(chip);
    }
  }

  private compareChoices(): [string, string][] {
    const choices: [string, string][] = [];
    if (this.basePngBytes) choices.push(["base", "session base"]);
    if (this.canvasPngBytes) choices.push(["canvas", "current canvas"]);
    for (const card of this.results ?? []) {
      choices.push([`r${card.rank}`, `result rank ${card.rank}`]);
    }
    return choices;
  }

  private renderComparePanel(): void {
    for (const name of ["compareA", "compareB"]) {
      const sel = this.ref<HTMLSelectElement>(name);
      const prev = sel.value;
      sel.innerHTML = "";
      for (const [value, label] of this.compareChoices()) {
        const opt = document.createElement("option");
        opt.value = value;
        opt.textContent = label;
        sel.appendChild(opt);
      }
      if ([...sel.options].some((o) => o.value === prev)) sel.value = prev;
      else if (name === "compareB" && sel.options.length > 1) sel.selectedIndex = 1;
    }
  }

  private compareBytes(choice: string): Uint8Array | null {
    if (choice === "base") return this.basePngBytes;
    if (choice === "canvas") return this.canvasPngBytes;
    const rank = Number(choice.slice(1));
    return this.results?.find((c) => c.rank === rank)?.bytes ?? null;
  }

  private renderCompare(): void {
    if (this.tab !== "compare") return;
    const view = this.ref("compareView");
    view.innerHTML = "";
    const overlay = this.ref<HTMLInputElement>("compareOverlay").checked;
    for (const name of ["compareA", "compareB"]) {
      const choice = this.ref<HTMLSelectElement>(name).value;
      const bytes = this.compareBytes(choice);
      const fig = document.createElement("figure");
      fig.className = "card compare-card";
      if (bytes) {
        const wrap = document.createElement("div");
        wrap.className = "compare-stack";
        const img = document.createElement("img");
        img.src = pngDataUrl(bytes);
        img.alt = choice;
        wrap.appendChild(img);
        if (overlay && this.canvas) {
          const mc = document.createElement("canvas");
          mc.className = "overlay";
          mc.width = this.canvas.width;
          mc.height = this.canvas.height;
          const ctx = context2d(mc);
          if (ctx) {
            const data = new ImageData(this.canvas.width, this.canvas.height);
            for (let i = 0; i < this.canvas.mask.length; i++) {
              if (!this.canvas.mask[i]) continue;
              data.data[i * 4] = 255;
              data.data[i * 4 + 1] = 50;
              data.data[i * 4 + 2] = 50;
              data.data[i * 4 + 3] = 110;
            }
            ctx.putImageData(data, 0, 0);
          }
          wrap.appendChild(mc);
        }
        const cap = document.createElement("figcaption");
        cap.textContent = choice;
        fig.append(wrap, cap);
      } else {
        fig.textContent = "nothing to show";
      }
      view.appendChild(fig);
    }
  }

  // ----- errors -----

  private showError(message: string, knownPrompts: string[] | null = null): void {
    this.errorMessage = message;
    this.errorPrompts = knownPrompts;
    const box = this.ref("errorBox");
    box.classList.remove("hidden");
    box.innerHTML = "";
    const text = document.createElement("span");
    text.textContent = message;
    box.appendChild(text);
    if (knownPrompts && knownPrompts.length) {
      const list = document.createElement("div");
      list.className = "prompt-chips";
      for (const p of knownPrompts) {
        const chip = document.createElement("code");
        chip.textContent = p;
        list.appendChild(chip);
      }
      box.appendChild(list);
    }
  }

  private clearError(): void {
    this.errorMessage = null;
    this.errorPrompts = null;
    const box = this.ref("errorBox");
    box.classList.add("hidden");
    box.innerHTML = "";
  }

  private surfaceApiError(exc: unknown): void {
    if (exc instanceof ApiError) {
      this.showError(exc.message, exc.knownPrompts);
    } else {
      this.showError((exc as Error).message ?? String(exc));
    }
  }
}

/** 2D context, or null where canvas rendering is unavailable (test DOMs);
 * overlays are display-only, so skipping them changes nothing else. */
function context2d(el: HTMLCanvasElement): CanvasRenderingContext2D | null {
  try {
    return el.getContext("2d");
  } catch {
    return null;
  }
}
