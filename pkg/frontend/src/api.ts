/** Thin client for the /v1 HTTP endpoints; all SR results come from here. */

import type { EstimateResponse, HealthResponse, InferResponse, Settings } from "./types.js";

export class ServiceError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(detail);
  }
}

export interface ServiceClient {
  health(): Promise<HealthResponse>;
  estimate(imageB64: string): Promise<EstimateResponse>;
  infer(imageB64: string, settings: Settings): Promise<InferResponse>;
}

async function parseOrThrow<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = `${res.status}`;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ServiceError(res.status, detail);
  }
  return (await res.json()) as T;
}

export function createClient(baseUrl = "", fetchFn: typeof fetch = fetch): ServiceClient {
  const post = (path: string, body: unknown) =>
    fetchFn(`${baseUrl}/v1${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });

  return {
    async health() {
      return parseOrThrow<HealthResponse>(await fetchFn(`${baseUrl}/v1/health`));
    },
    async estimate(imageB64) {
      return parseOrThrow<EstimateResponse>(await post("/estimate", { image_b64: imageB64 }));
    },
    async infer(imageB64, settings) {
      // slider values map to request fields verbatim; nulls are simply omitted
      const body: Record<string, unknown> = {
        image_b64: imageB64,
        lambda_cfg: settings.lambdaCfg,
        noise_sigma_start: settings.noiseSigmaStart,
        seed: settings.seed,
      };
      if (settings.dN !== null) body.d_n = settings.dN;
      if (settings.dB !== null) body.d_b = settings.dB;
      return parseOrThrow<InferResponse>(await post("/infer", body));
    },
  };
}
