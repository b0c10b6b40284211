/** Session state for the what-if loop: one image, sliders, bounded history.
 *
 * Invariants: slider overrides clamp to d in [0,1]^2 and lambda in [0,3];
 * history entries are frozen once added and capped at MAX_HISTORY with
 * explicit pinning; at most one inference is in flight, later run requests
 * queue behind it; every displayed result comes from the service.
 */

import type { ServiceClient } from "./api.js";
import type { HistoryEntry, InferReport, Settings } from "./types.js";

export const MAX_HISTORY = 20;

const clamp = (v: number, lo: number, hi: number) => Math.min(Math.max(v, lo), hi);

export function defaultSettings(): Settings {
  return { dN: null, dB: null, lambdaCfg: 1.1, noiseSigmaStart: 0, seed: 0 };
}

export class SessionModel {
  imageB64: string | null = null;
  imageName = "";
  estimated: { dN: number; dB: number } | null = null;
  settings: Settings = defaultSettings();
  history: HistoryEntry[] = [];
  error: string | null = null;
  busy = false;

  private nextId = 1;
  private pending = 0;
  private queue: Promise<unknown> = Promise.resolve();

  constructor(private api: ServiceClient) {}

  async upload(imageB64: string, name: string): Promise<void> {
    this.imageB64 = imageB64;
    this.imageName = name;
    this.estimated = null;
    this.settings.dN = null;
    this.settings.dB = null;
    this.error = null;
    const est = await this.api.estimate(imageB64);
    this.estimated = { dN: est.d_n, dB: est.d_b };
  }

  /** d shown on the sliders: overrides when set, otherwise the estimate. */
  displayedD(): { dN: number; dB: number } {
    return {
      dN: this.settings.dN ?? this.estimated?.dN ?? 0,
      dB: this.settings.dB ?? this.estimated?.dB ?? 0,
    };
  }

  setNoiseScore(v: number | null): void {
    this.settings.dN = v === null ? null : clamp(v, 0, 1);
  }

  setBlurScore(v: number | null): void {
    this.settings.dB = v === null ? null : clamp(v, 0, 1);
  }

  setLambda(v: number): void {
    this.settings.lambdaCfg = clamp(v, 0, 3);
  }

  setNoiseStart(v: number): void {
    this.settings.noiseSigmaStart = Math.max(v, 0);
  }

  setSeed(v: number): void {
    this.settings.seed = Math.trunc(v);
  }

  /** Requests waiting behind the run at the head of the queue. */
  get queuedRuns(): number {
    return Math.max(this.pending - 1, 0);
  }

  /** Run inference; settings are captured at request time, calls run in order. */
  run(): Promise<HistoryEntry> {
    if (!this.imageB64) {
      return Promise.reject(new Error("no image uploaded"));
    }
    const imageB64 = this.imageB64;
    const settings: Settings = { ...this.settings };
    this.pending += 1;
    const result = this.queue.then(() => this.runNow(imageB64, settings));
    this.queue = result.catch(() => undefined);
    return result;
  }

  private async runNow(imageB64: string, settings: Settings): Promise<HistoryEntry> {
    this.busy = true;
    this.error = null;
    try {
      const res = await this.api.infer(imageB64, settings);
      const entry = this.addHistory(settings, res.image_b64, res.report);
      return entry;
    } catch (err) {
      this.error = describeError(err);
      throw err;
    } finally {
      this.busy = false;
      this.pending -= 1;
    }
  }

  addHistory(settings: Settings, imageB64: string, report: InferReport): HistoryEntry {
    const entry: HistoryEntry = Object.freeze({
      id: this.nextId++,
      settings: Object.freeze({ ...settings }),
      imageB64,
      report,
      pinned: false,
    });
    this.history.push(entry);
    this.evict();
    return entry;
  }

  togglePin(id: number): void {
    // entries are immutable; pin state changes by replacement
    this.history = this.history.map((e) =>
      e.id === id ? Object.freeze({ ...e, pinned: !e.pinned }) : e,
    );
  }

  private evict(): void {
    while (this.history.length > MAX_HISTORY) {
      const idx = this.history.findIndex((e) => !e.pinned);
      if (idx === -1) break; // everything pinned: keep over-cap rather than drop pins
      this.history.splice(idx, 1);
    }
  }

  entry(id: number): HistoryEntry | undefined {
    return this.history.find((e) => e.id === id);
  }
}

export function describeError(err: unknown): string {
  const status = (err as { status?: number }).status;
  if (status === 413) {
    return "Image exceeds the service size limit; upload a smaller one.";
  }
  if (err instanceof Error && err.message) {
    return status ? `Service error ${status}: ${err.message}` : `Service unreachable: ${err.message}`;
  }
  return "Service unreachable.";
}

/** Names of fields that differ between two runs' settings. */
export function settingsDiff(a: Settings, b: Settings): string[] {
  const fields: (keyof Settings)[] = ["dN", "dB", "lambdaCfg", "noiseSigmaStart", "seed"];
  return fields.filter((f) => a[f] !== b[f]);
}
