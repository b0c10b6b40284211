import { describe, expect, it } from "vitest";

import type { ServiceClient } from "../src/api.js";
import { MAX_HISTORY, SessionModel, defaultSettings, settingsDiff } from "../src/session.js";
import type { InferReport, Settings } from "../src/types.js";

function fakeReport(overrides: Partial<InferReport> = {}): InferReport {
  return {
    d_used: [0.3, 0.4],
    d_estimated: [0.3, 0.4],
    lambda_cfg: 1.1,
    noise_sigma_start: 0,
    seed: 0,
    unet_forwards: 2,
    estimator_calls: 1,
    ms: 5,
    output_size: [64, 64],
    ...overrides,
  };
}

function fakeApi(opts: { delayMs?: number; fail?: boolean; failStatus?: number } = {}) {
  const calls: { infer: Array<Record<string, unknown>>; estimate: string[] } = {
    infer: [],
    estimate: [],
  };
  const api: ServiceClient = {
    async health() {
      return { status: "ok", bundle: {}, scale: 4, requests: 0 };
    },
    async estimate(imageB64) {
      calls.estimate.push(imageB64);
      return { d_n: 0.25, d_b: 0.75 };
    },
    async infer(imageB64, settings) {
      calls.infer.push({ imageB64, ...settings });
      if (opts.delayMs) await new Promise((r) => setTimeout(r, opts.delayMs));
      if (opts.fail) {
        const err = new Error("boom") as Error & { status?: number };
        err.status = opts.failStatus;
        throw err;
      }
      return {
        image_b64: `sr-of-${imageB64}-seed${settings.seed}`,
        report: fakeReport({
          d_used: [settings.dN ?? 0.25, settings.dB ?? 0.75],
          lambda_cfg: settings.lambdaCfg,
          seed: settings.seed,
          unet_forwards: settings.lambdaCfg === 1 ? 1 : 2,
        }),
      };
    },
  };
  return { api, calls };
}

describe("SessionModel", () => {
  it("upload estimates d and shows it when no override is set", async () => {
    const { api } = fakeApi();
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    expect(s.estimated).toEqual({ dN: 0.25, dB: 0.75 });
    expect(s.displayedD()).toEqual({ dN: 0.25, dB: 0.75 });
  });

  it("slider values clamp to valid ranges", () => {
    const s = new SessionModel(fakeApi().api);
    s.setNoiseScore(1.7);
    s.setBlurScore(-0.2);
    s.setLambda(9);
    expect(s.settings.dN).toBe(1);
    expect(s.settings.dB).toBe(0);
    expect(s.settings.lambdaCfg).toBe(3);
    s.setLambda(-1);
    expect(s.settings.lambdaCfg).toBe(0);
  });

  it("sends overrides verbatim and omits them when unset", async () => {
    const { api, calls } = fakeApi();
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    await s.run();
    expect(calls.infer[0].dN).toBeNull();
    s.setNoiseScore(0.6);
    await s.run();
    expect(calls.infer[1].dN).toBe(0.6);
    expect(calls.infer[1].dB).toBeNull();
  });

  it("seed is sticky across runs", async () => {
    const { api, calls } = fakeApi();
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    s.setSeed(42);
    await s.run();
    s.setLambda(2);
    await s.run();
    expect(calls.infer.map((c) => c.seed)).toEqual([42, 42]);
  });

  it("identical settings and seed produce identical result payloads", async () => {
    const { api } = fakeApi();
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    s.setSeed(7);
    const a = await s.run();
    const b = await s.run();
    expect(a.imageB64).toBe(b.imageB64);
  });

  it("history entries are immutable and capped with pinning", async () => {
    const { api } = fakeApi();
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    const first = await s.run();
    expect(Object.isFrozen(first)).toBe(true);
    expect(Object.isFrozen(first.settings)).toBe(true);
    s.togglePin(first.id);
    for (let i = 0; i < MAX_HISTORY + 5; i++) {
      await s.run();
    }
    expect(s.history.length).toBe(MAX_HISTORY);
    expect(s.history.some((e) => e.id === first.id && e.pinned)).toBe(true);
  });

  it("queues further runs behind the in-flight one", async () => {
    const { api, calls } = fakeApi({ delayMs: 20 });
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    s.setSeed(1);
    const p1 = s.run();
    s.setSeed(2);
    const p2 = s.run();
    expect(s.queuedRuns).toBe(1);
    const [e1, e2] = await Promise.all([p1, p2]);
    expect(calls.infer.length).toBe(2);
    expect(e1.settings.seed).toBe(1);
    expect(e2.settings.seed).toBe(2);
    expect(s.history.map((e) => e.id)).toEqual([e1.id, e2.id]);
  });

  it("failures set a visible error and preserve the session", async () => {
    const { api } = fakeApi({ fail: true });
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    await expect(s.run()).rejects.toThrow();
    expect(s.error).toContain("boom");
    expect(s.imageB64).toBe("img");
    expect(s.history.length).toBe(0);
  });

  it("413 failures explain the size limit", async () => {
    const { api } = fakeApi({ fail: true, failStatus: 413 });
    const s = new SessionModel(api);
    await s.upload("img", "a.png");
    await expect(s.run()).rejects.toThrow();
    expect(s.error).toMatch(/size limit/i);
  });

  it("run without an image rejects", async () => {
    const s = new SessionModel(fakeApi().api);
    await expect(s.run()).rejects.toThrow(/no image/);
  });
});

describe("settingsDiff", () => {
  it("empty for identical settings", () => {
    const a = defaultSettings();
    expect(settingsDiff(a, { ...a })).toEqual([]);
  });

  it("lists exactly the changed fields", () => {
    const a: Settings = { dN: 0, dB: null, lambdaCfg: 1.1, noiseSigmaStart: 0, seed: 3 };
    const b: Settings = { dN: 1, dB: null, lambdaCfg: 1.1, noiseSigmaStart: 0.5, seed: 3 };
    expect(settingsDiff(a, b)).toEqual(["dN", "noiseSigmaStart"]);
  });
});
