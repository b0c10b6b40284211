/** Wire types for the /v1 inference service. */

export interface InferReport {
  d_used: [number, number];
  d_estimated: [number, number] | null;
  lambda_cfg: number;
  noise_sigma_start: number;
  seed: number | null;
  unet_forwards: number;
  estimator_calls: number;
  ms: number;
  output_size: [number, number];
}

export interface InferResponse {
  image_b64: string;
  report: InferReport;
}

export interface EstimateResponse {
  d_n: number;
  d_b: number;
}

export interface HealthResponse {
  status: string;
  bundle: Record<string, unknown>;
  scale: number;
  requests: number;
}

/** Current control-panel state; null overrides mean "use the estimator". */
export interface Settings {
  dN: number | null;
  dB: number | null;
  lambdaCfg: number;
  noiseSigmaStart: number;
  seed: number;
}

export interface HistoryEntry {
  id: number;
  settings: Settings;
  imageB64: string;
  report: InferReport;
  pinned: boolean;
}
