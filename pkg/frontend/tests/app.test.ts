// @vitest-environment jsdom
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { Api } from "../src/api";
import { App } from "../src/app";
import { bytesToBase64, encodeRgbPng, pngDataUrl } from "../src/png";
import { FakeService } from "./fake_service";
import { makeBasePixels } from "./helpers";

const BASE_PNG = encodeRgbPng(16, 12, makeBasePixels(16, 12));

let fake: FakeService;
let app: App;
let root: HTMLElement;

function el<T extends HTMLElement>(ref: string): T {
  const found = root.querySelector<T>(`[data-ref="${ref}"]`);
  if (!found) throw new Error(`missing [data-ref=${ref}]`);
  return found;
}

function setValue(ref: string, value: string): void {
  const input = el<HTMLInputElement>(ref);
  input.value = value;
  input.dispatchEvent(new Event("input", { bubbles: true }));
}

async function waitFor(cond: () => boolean, what: string, timeoutMs = 5000): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > timeoutMs) throw new Error(`timed out waiting for ${what}`);
    await new Promise((r) => setTimeout(r, 2));
  }
}

function pointer(type: string, x: number, y: number): void {
  el("viewport").dispatchEvent(
    new MouseEvent(type, { bubbles: true, clientX: x, clientY: y, button: 0 }),
  );
}

async function openBase(): Promise<void> {
  await app.openImage(BASE_PNG);
  await waitFor(() => app.sessionId !== null, "session");
}

function drawMaskBox(): void {
  app.brushRadius = 2;
  pointer("pointerdown", 5, 5);
  pointer("pointermove", 10, 5);
  pointer("pointermove", 10, 8);
  pointer("pointerup", 10, 8);
}

async function submitAndFinish(prompt = "bright_red", samples = "2"): Promise<void> {
  setValue("editPrompt", prompt);
  setValue("editSamples", samples);
  await app.submitEdit();
  await waitFor(() => app.results !== null, "results");
}

beforeEach(async () => {
  window.location.hash = "";
  fake = new FakeService();
  root = document.createElement("div");
  document.body.appendChild(root);
  app = new App(root, new Api("http://fake", fake.fetchFn), { pollIntervalMs: 2 });
  await app.ready;
});

afterEach(() => {
  root.remove();
});

describe("boot and session start", () => {
  it("fills the prompt datalist from the lexicon", () => {
    const options = [...el("lexiconList").querySelectorAll("option")].map((o) => o.value);
    expect(options).toEqual(fake.lexicon);
  });

  it("opening an image starts a session and shows the served canvas bytes", async () => {
    await openBase();
    expect(el("sessionInfo").textContent).toContain("step 1");
    expect(el("sessionInfo").textContent).toContain("16×12");
    expect(el("placeholder").classList.contains("hidden")).toBe(true);
    // displayed canvas is byte-identical to what the service returned
    expect(el<HTMLImageElement>("baseImg").src).toBe(pngDataUrl(BASE_PNG));
    expect(window.location.hash).toBe(`#s=${app.sessionId}`);
  });

  it("rejects bytes that are not a PNG without calling the service", async () => {
    await app.openImage(new Uint8Array([1, 2, 3]));
    expect(el("errorBox").textContent).toContain("not a usable PNG");
    expect(app.sessionId).toBeNull();
  });
});

describe("mask painting via pointer events", () => {
  it("down-move-up paints the mask layer along the drag", async () => {
    await openBase();
    drawMaskBox();
    const canvas = app.canvas!;
    expect(canvas.hasMask()).toBe(true);
    // a point on the drag path, well inside the radius
    expect(canvas.mask[5 * 16 + 7]).toBe(1);
    // far corner untouched
    expect(canvas.mask[11 * 16 + 15]).toBe(0);
  });

  it("the erase tool removes paint", async () => {
    await openBase();
    drawMaskBox();
    app.setTool("erase");
    app.brushRadius = 10;
    pointer("pointerdown", 7, 6);
    pointer("pointerup", 7, 6);
    expect(app.canvas!.hasMask()).toBe(false);
  });
});

describe("edit submission", () => {
  it("refuses to submit without a mask", async () => {
    await openBase();
    setValue("editPrompt", "bright_red");
    await app.submitEdit();
    expect(el("errorBox").textContent).toContain("paint a mask");
    expect(fake.stepCalls.length).toBe(0);
  });

  it("rejects prompts outside the lexicon client-side, listing the options", async () => {
    await openBase();
    drawMaskBox();
    setValue("editPrompt", "zebra");
    await app.submitEdit();
    expect(el("errorBox").textContent).toContain("unknown prompt");
    const chips = [...el("errorBox").querySelectorAll("code")].map((c) => c.textContent);
    expect(chips).toEqual(fake.lexicon);
    expect(fake.stepCalls.length).toBe(0);
  });

  it("surfaces a server-side unknown-prompt 422 with the lexicon list", async () => {
    await openBase();
    drawMaskBox();
    app.lexicon.push("sneaky"); // slip past the client gate; server stays authoritative
    setValue("editPrompt", "sneaky");
    await app.submitEdit();
    expect(el("errorBox").textContent).toContain("unknown prompt");
    expect(el("errorBox").querySelectorAll("code").length).toBe(fake.lexicon.length);
  });

  it("runs the happy path: progress, ranked gallery, byte-identical images", async () => {
    await openBase();
    drawMaskBox();
    setValue("editPrompt", "bright_red");
    setValue("editSamples", "2");
    await app.submitEdit();
    // one in-flight job: submit is disabled while polling
    expect(el<HTMLButtonElement>("editSubmit").disabled).toBe(true);
    await waitFor(() => app.results !== null, "results");
    expect(el<HTMLButtonElement>("editSubmit").disabled).toBe(false);

    const payload = fake.stepCalls[0];
    expect(payload.application).toBe("object_edit");
    expect(payload.prompt).toBe("bright_red");
    expect(payload.num_samples).toBe(2);
    expect(typeof payload.mask).toBe("string");
    expect(payload.image).toBeUndefined();

    const imgs = [...el("gallery").querySelectorAll("img")];
    expect(imgs.map((i) => i.dataset.rank)).toEqual(["1", "2"]);
    const jobId = app.resultsJobId as string;
    expect(imgs[0].src).toBe(pngDataUrl(fake.resultBytes(jobId, 1)));
    expect(imgs[1].src).toBe(pngDataUrl(fake.resultBytes(jobId, 2)));
  });

  it("keeps the gallery in the service's order without re-sorting", async () => {
    await openBase();
    drawMaskBox();
    fake.nextResults = [
      { rank: 2, seed: 1, score: -0.2 },
      { rank: 1, seed: 0, score: -0.1 },
      { rank: null, seed: 2, error: "sample exploded" },
    ];
    await submitAndFinish("bright_red", "3");
    const imgs = [...el("gallery").querySelectorAll("img")];
    expect(imgs.map((i) => i.dataset.rank)).toEqual(["2", "1"]);
    expect(el("gallery").textContent).toContain("sample exploded");
    expect(el("resultsNote").textContent).toContain("1 failed");
  });

  it("surfaces a server 409 when a step is already pending", async () => {
    await openBase();
    drawMaskBox();
    fake.nextPollsToDone = 1_000_000;
    await submitAndFinishNever();
    // client guard first
    await app.submitEdit();
    expect(el("errorBox").textContent).toContain("already in flight");
    // then the server's own answer, with the client gate off
    app.inFlightJobId = null;
    setValue("editPrompt", "bright_red");
    await app.submitEdit();
    expect(el("errorBox").textContent).toContain("step in flight");
  });
});

async function submitAndFinishNever(): Promise<void> {
  setValue("editPrompt", "bright_red");
  await app.submitEdit();
  await waitFor(() => app.inFlightJobId !== null, "job start");
}

describe("choosing results and sessions", () => {
  it("use-this-result makes the chosen bytes the next step's base", async () => {
    await openBase();
    drawMaskBox();
    await submitAndFinish();
    const jobId = app.resultsJobId as string;
    el("gallery").querySelector<HTMLButtonElement>('[data-use-rank="1"]')!.click();
    await waitFor(() => app.sessionSteps === 1, "session step");

    const chosen = fake.resultBytes(jobId, 1);
    expect(Buffer.from(app.canvasPngBytes!).equals(Buffer.from(chosen))).toBe(true);
    expect(el<HTMLImageElement>("baseImg").src).toBe(pngDataUrl(chosen));
    expect(el("sessionInfo").textContent).toContain("step 2");
    // gallery cleared, mask layer fresh for the next step
    expect(el("gallery").querySelectorAll("img").length).toBe(0);
    expect(app.canvas!.hasMask()).toBe(false);
  });

  it("restart-from-canvas opens a new session with identical canvas bytes", async () => {
    await openBase();
    drawMaskBox();
    await submitAndFinish();
    el("gallery").querySelector<HTMLButtonElement>('[data-use-rank="1"]')!.click();
    await waitFor(() => app.sessionSteps === 1, "session step");

    const before = app.canvasPngBytes!;
    const oldId = app.sessionId;
    el<HTMLButtonElement>("newSessionBtn").click();
    await waitFor(() => app.sessionId !== oldId, "new session");
    expect(app.sessionSteps).toBe(0);
    expect(Buffer.from(app.canvasPngBytes!).equals(Buffer.from(before))).toBe(true);
    expect(el("sessionInfo").textContent).toContain("step 1");
  });

  it("a #s= hash resumes the session and re-attaches to a pending job", async () => {
    await openBase();
    drawMaskBox();
    fake.nextPollsToDone = 4;
    setValue("editPrompt", "deep_blue");
    setValue("editSamples", "1");
    await app.submitEdit();
    const sessionId = app.sessionId as string;

    // simulate a reload: fresh App over the same service, same hash
    window.location.hash = `#s=${sessionId}`;
    const root2 = document.createElement("div");
    document.body.appendChild(root2);
    const app2 = new App(root2, new Api("http://fake", fake.fetchFn), { pollIntervalMs: 2 });
    await app2.ready;
    expect(app2.sessionId).toBe(sessionId);
    await waitFor(() => app2.results !== null, "resumed results");
    expect(root2.querySelectorAll('[data-ref="gallery"] img').length).toBe(1);
    root2.remove();
  });
});

describe("scribble flow", () => {
  it("submits scribble image, coverage mask, and dilate radius", async () => {
    await openBase();
    app.setTab("scribble");
    app.paintStroke({
      layer: "scribble",
      erase: false,
      radius: 2,
      color: [220, 50, 40],
      points: [[6, 6], [10, 6]],
    });
    setValue("scribblePrompt", "forest_green");
    setValue("scribbleDilate", "2");
    await app.submitScribble();
    await waitFor(() => fake.stepCalls.length === 1, "step call");
    const payload = fake.stepCalls[0];
    expect(payload.application).toBe("scribble");
    expect(typeof payload.scribble_image).toBe("string");
    expect(typeof payload.scribble_mask).toBe("string");
    expect(payload.dilate_radius).toBe(2);
    expect(payload.mask).toBeUndefined();
  });

  it("includes the manual mask when one is painted", async () => {
    await openBase();
    drawMaskBox();
    app.paintStroke({
      layer: "scribble",
      erase: false,
      radius: 1,
      color: [1, 2, 3],
      points: [[3, 3]],
    });
    setValue("scribblePrompt", "");
    await app.submitScribble();
    await waitFor(() => fake.stepCalls.length === 1, "step call");
    expect(typeof fake.stepCalls[0].mask).toBe("string");
    expect(fake.stepCalls[0].prompt).toBe("");
  });

  it("needs a scribble before submitting", async () => {
    await openBase();
    await app.submitScribble();
    expect(el("errorBox").textContent).toContain("draw a scribble");
  });
});

describe("extrapolation flow", () => {
  it("submits side prompts and segment counts, then shows a wide gallery", async () => {
    await openBase();
    app.setTab("extrapolate");
    setValue("extraRight", "1");
    setValue("extraPromptRight", "deep_blue");
    await app.submitExtrapolate();
    await waitFor(() => app.results !== null, "results");
    const payload = fake.stepCalls[0];
    expect(payload.application).toBe("extrapolate");
    expect(payload.segments_right).toBe(1);
    expect(payload.prompt_right).toBe("deep_blue");
    expect(payload.segments_left).toBe(0);
    expect(el("gallery").classList.contains("wide")).toBe(true);
  });
});

describe("inpaint labeling", () => {
  it("shows the no-prompt note exactly when the prompt is empty", async () => {
    await openBase();
    expect(el("editInpaintNote").classList.contains("hidden")).toBe(false);
    setValue("editPrompt", "bright_red");
    expect(el("editInpaintNote").classList.contains("hidden")).toBe(true);
    setValue("editPrompt", "");
    expect(el("editInpaintNote").classList.contains("hidden")).toBe(false);
  });
});

describe("compare view", () => {
  it("shows any two picks side by side with an optional mask overlay", async () => {
    await openBase();
    drawMaskBox();
    await submitAndFinish();
    app.setTab("compare");
    const selA = el<HTMLSelectElement>("compareA");
    const selB = el<HTMLSelectElement>("compareB");
    const values = [...selA.options].map((o) => o.value);
    expect(values).toEqual(["base", "canvas", "r1", "r2"]);

    selA.value = "base";
    selB.value = "r1";
    selB.dispatchEvent(new Event("change", { bubbles: true }));
    const figs = [...el("compareView").querySelectorAll("figure")];
    expect(figs.length).toBe(2);
    expect(figs[0].querySelector("img")!.src).toBe(pngDataUrl(BASE_PNG));
    expect(figs[1].querySelector("img")!.src).toBe(
      pngDataUrl(fake.resultBytes(app.resultsJobId as string, 1)),
    );
    expect(el("compareView").querySelectorAll("canvas").length).toBe(0);

    const overlay = el<HTMLInputElement>("compareOverlay");
    overlay.checked = true;
    overlay.dispatchEvent(new Event("change", { bubbles: true }));
    expect(el("compareView").querySelectorAll("canvas").length).toBe(2);
  });
});

describe("navigation", () => {
  it("drops the poll loop on pagehide", async () => {
    await openBase();
    drawMaskBox();
    fake.nextPollsToDone = 1_000_000;
    await submitAndFinishNever();
    const jobId = app.inFlightJobId as string;
    await waitFor(() => fake.jobs.get(jobId)!.polls >= 2, "a few polls");
    window.dispatchEvent(new Event("pagehide"));
    await new Promise((r) => setTimeout(r, 10));
    const after = fake.jobs.get(jobId)!.polls;
    await new Promise((r) => setTimeout(r, 30));
    expect(fake.jobs.get(jobId)!.polls).toBe(after);
  });
});
