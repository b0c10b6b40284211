/** Pixel-difference overlay and a shared pan/zoom transform for compare view. */

export interface PixelImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA
}

export interface DiffResult {
  overlay: Uint8ClampedArray<ArrayBuffer>; // RGBA, red where pixels differ
  changedPixels: number;
  maxDelta: number;
}

/** Red overlay whose alpha scales with per-pixel RGB difference. */
export function diffOverlay(a: PixelImage, b: PixelImage): DiffResult {
  if (a.width !== b.width || a.height !== b.height) {
    throw new Error(`image sizes differ: ${a.width}x${a.height} vs ${b.width}x${b.height}`);
  }
  const n = a.width * a.height;
  const overlay = new Uint8ClampedArray(n * 4);
  let changed = 0;
  let maxDelta = 0;
  for (let i = 0; i < n; i++) {
    const o = i * 4;
    const delta = Math.max(
      Math.abs(a.data[o] - b.data[o]),
      Math.abs(a.data[o + 1] - b.data[o + 1]),
      Math.abs(a.data[o + 2] - b.data[o + 2]),
    );
    if (delta > 0) {
      changed++;
      overlay[o] = 255;
      overlay[o + 3] = Math.min(64 + delta * 3, 255);
      if (delta > maxDelta) maxDelta = delta;
    }
  }
  return { overlay, changedPixels: changed, maxDelta };
}

/** One transform applied to every canvas in the compare view (synced pan/zoom). */
export class ViewTransform {
  scale = 1;
  tx = 0;
  ty = 0;

  zoomAt(x: number, y: number, factor: number, minScale = 0.25, maxScale = 16): void {
    const next = Math.min(Math.max(this.scale * factor, minScale), maxScale);
    const applied = next / this.scale;
    // keep the point under the cursor fixed
    this.tx = x - (x - this.tx) * applied;
    this.ty = y - (y - this.ty) * applied;
    this.scale = next;
  }

  panBy(dx: number, dy: number): void {
    this.tx += dx;
    this.ty += dy;
  }

  reset(): void {
    this.scale = 1;
    this.tx = 0;
    this.ty = 0;
  }

  apply(ctx: CanvasRenderingContext2D): void {
    ctx.setTransform(this.scale, 0, 0, this.scale, this.tx, this.ty);
  }
}
