/** Layered canvas model behind the studio's drawing surface.
 *
 * Three layers share the base image's exact resolution: the base PNG bytes
 * (service-provided, never touched), a binary mask layer, and a colored
 * scribble layer. Strokes are recorded as a script of plain events so a
 * drawing can be replayed deterministically; exports binarize the mask and
 * flatten the scribble, both as PNG bytes ready for the job API.
 *
 * A brush dot of radius r covers the pixel disc
 *     {(x, y) : (x - cx)^2 + (y - cy)^2 <= r^2}
 * and a drag segment covers the capsule of the same radius around it;
 * dilation below uses the same disc, so a dot equals a one-pixel mask
 * dilated by r.
 */

import { PngInfo, encodeGrayPng, encodeRgbPng, readPngInfo } from "./png";

export type Rgb = [number, number, number];

export interface StrokeEvent {
  layer: "mask" | "scribble";
  erase: boolean;
  radius: number;
  /** Scribble paint color; ignored for mask strokes and erasing. */
  color?: Rgb;
  /** Polyline in image coordinates; a single point is a dot. */
  points: [number, number][];
  /** Wipe the whole layer; points and radius are ignored. */
  clear?: true;
}

export const MIN_ZOOM = 0.125;
export const MAX_ZOOM = 16;

export class CanvasState {
  readonly width: number;
  readonly height: number;
  /** The current base image, byte-for-byte as the service sent it. */
  readonly basePng: Uint8Array;
  readonly baseInfo: PngInfo;

  /** Mask layer, w*h of {0, 1}. */
  mask: Uint8Array;
  /** Scribble color, w*h*3; meaningful only where scribbleAlpha is 1. */
  scribbleColor: Uint8Array;
  /** Scribble coverage, w*h of {0, 1}. */
  scribbleAlpha: Uint8Array;

  zoom = 1;
  panX = 0;
  panY = 0;

  /** Every stroke applied so far, in order; replaying it reproduces the layers. */
  readonly script: StrokeEvent[] = [];

  constructor(basePng: Uint8Array) {
    this.baseInfo = readPngInfo(basePng);
    this.basePng = basePng;
    this.width = this.baseInfo.width;
    this.height = this.baseInfo.height;
    const n = this.width * this.height;
    this.mask = new Uint8Array(n);
    this.scribbleColor = new Uint8Array(n * 3);
    this.scribbleAlpha = new Uint8Array(n);
  }

  /** Apply one stroke to its layer and record it in the script. */
  paint(ev: StrokeEvent): void {
    if (ev.layer === "scribble" && !ev.erase && !ev.color) {
      throw new Error("scribble strokes need a color");
    }
    this.script.push(ev);
    const pts = ev.points;
    if (pts.length === 0) return;
    if (pts.length === 1) {
      this.stampDisc(ev, pts[0][0], pts[0][1]);
      return;
    }
    for (let i = 0; i + 1 < pts.length; i++) {
      this.stampCapsule(ev, pts[i], pts[i + 1]);
    }
  }

  private writePixel(ev: StrokeEvent, x: number, y: number): void {
    const idx = y * this.width + x;
    if (ev.layer === "mask") {
      this.mask[idx] = ev.erase ? 0 : 1;
      return;
    }
    if (ev.erase) {
      this.scribbleAlpha[idx] = 0;
      this.scribbleColor[idx * 3] = 0;
      this.scribbleColor[idx * 3 + 1] = 0;
      this.scribbleColor[idx * 3 + 2] = 0;
    } else {
      const [r, g, b] = ev.color as Rgb;
      this.scribbleAlpha[idx] = 1;
      this.scribbleColor[idx * 3] = r;
      this.scribbleColor[idx * 3 + 1] = g;
      this.scribbleColor[idx * 3 + 2] = b;
    }
  }

  private stampDisc(ev: StrokeEvent, cx: number, cy: number): void {
    const r = ev.radius;
    const r2 = r * r;
    const x0 = Math.max(0, Math.ceil(cx - r));
    const x1 = Math.min(this.width - 1, Math.floor(cx + r));
    const y0 = Math.max(0, Math.ceil(cy - r));
    const y1 = Math.min(this.height - 1, Math.floor(cy + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.writePixel(ev, x, y);
      }
    }
  }

  private stampCapsule(ev: StrokeEvent, a: [number, number], b: [number, number]): void {
    const r = ev.radius;
    const r2 = r * r;
    const abx = b[0] - a[0];
    const aby = b[1] - a[1];
    const len2 = abx * abx + aby * aby;
    if (len2 === 0) {
      this.stampDisc(ev, a[0], a[1]);
      return;
    }
    const x0 = Math.max(0, Math.ceil(Math.min(a[0], b[0]) - r));
    const x1 = Math.min(this.width - 1, Math.floor(Math.max(a[0], b[0]) + r));
    const y0 = Math.max(0, Math.ceil(Math.min(a[1], b[1]) - r));
    const y1 = Math.min(this.height - 1, Math.floor(Math.max(a[1], b[1]) + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        let t = ((x - a[0]) * abx + (y - a[1]) * aby) / len2;
        t = t < 0 ? 0 : t > 1 ? 1 : t;
        const dx = x - (a[0] + t * abx);
        const dy = y - (a[1] + t * aby);
        if (dx * dx + dy * dy <= r2) this.writePixel(ev, x, y);
      }
    }
  }

  clearMask(): void {
    this.mask.fill(0);
    this.script.push(CLEAR_MASK);
  }

  clearScribble(): void {
    this.scribbleAlpha.fill(0);
    this.scribbleColor.fill(0);
    this.script.push(CLEAR_SCRIBBLE);
  }

  hasMask(): boolean {
    return this.mask.some((v) => v !== 0);
  }

  hasScribble(): boolean {
    return this.scribbleAlpha.some((v) => v !== 0);
  }

  /** Mask layer as an 8-bit grayscale PNG, binarized to {0, 255}.
   *
   * `invert` flips the selection, for flows where the painted region is
   * the part to keep rather than the part to edit.
   */
  exportMaskPng(invert = false): Uint8Array {
    const px = new Uint8Array(this.mask.length);
    for (let i = 0; i < px.length; i++) {
      const on = this.mask[i] !== 0;
      px[i] = (invert ? !on : on) ? 255 : 0;
    }
    return encodeGrayPng(this.width, this.height, px);
  }

  /** Scribble strokes flattened on black as an RGB PNG. */
  exportScribblePng(): Uint8Array {
    return encodeRgbPng(this.width, this.height, this.scribbleColor);
  }

  /** Scribble coverage as a grayscale PNG, binarized to {0, 255}. */
  exportScribbleMaskPng(): Uint8Array {
    const px = new Uint8Array(this.scribbleAlpha.length);
    for (let i = 0; i < px.length; i++) px[i] = this.scribbleAlpha[i] ? 255 : 0;
    return encodeGrayPng(this.width, this.height, px);
  }

  /** Scribble coverage dilated by a disc of `radius`: the auto-mask preview. */
  autoMask(radius: number): Uint8Array {
    return dilate(this.scribbleAlpha, this.width, this.height, radius);
  }

  // -- view transform --
  // screen = origin + pan + image * zoom, so:

  screenToImage(sx: number, sy: number, originX: number, originY: number): [number, number] {
    return [(sx - originX - this.panX) / this.zoom, (sy - originY - this.panY) / this.zoom];
  }

  /** Rescale by `factor` keeping the image point under (sx, sy) fixed. */
  zoomAt(factor: number, sx: number, sy: number, originX: number, originY: number): void {
    const [ix, iy] = this.screenToImage(sx, sy, originX, originY);
    const next = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, this.zoom * factor));
    this.zoom = next;
    this.panX = sx - originX - ix * next;
    this.panY = sy - originY - iy * next;
  }

  panBy(dx: number, dy: number): void {
    this.panX += dx;
    this.panY += dy;
  }
}

const CLEAR_MASK: StrokeEvent = { layer: "mask", erase: true, radius: 0, points: [], clear: true };
const CLEAR_SCRIBBLE: StrokeEvent = {
  layer: "scribble",
  erase: true,
  radius: 0,
  points: [],
  clear: true,
};

/** Rebuild a drawing from its stroke script; same script, same layers. */
export function replayScript(basePng: Uint8Array, script: StrokeEvent[]): CanvasState {
  const state = new CanvasState(basePng);
  for (const ev of script) {
    if (ev.clear) {
      if (ev.layer === "mask") state.clearMask();
      else state.clearScribble();
    } else {
      state.paint(ev);
    }
  }
  return state;
}

/** Binary dilation with the disc structuring element {d : |d| <= radius}. */
export function dilate(
  mask: Uint8Array,
  width: number,
  height: number,
  radius: number,
): Uint8Array {
  if (radius <= 0) return mask.slice();
  const offsets: [number, number][] = [];
  const r = Math.floor(radius);
  for (let dy = -r; dy <= r; dy++) {
    for (let dx = -r; dx <= r; dx++) {
      if (dx * dx + dy * dy <= radius * radius) offsets.push([dx, dy]);
    }
  }
  const out = new Uint8Array(mask.length);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (!mask[y * width + x]) continue;
      for (const [dx, dy] of offsets) {
        const nx = x + dx;
        const ny = y + dy;
        if (nx >= 0 && nx < width && ny >= 0 && ny < height) {
          out[ny * width + nx] = 1;
        }
      }
    }
  }
  return out;
}
