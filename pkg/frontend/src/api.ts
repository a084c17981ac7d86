/**
 * Typed client for the expression-recognition HTTP service. All errors
 * surface the server's own message so the UI can show it verbatim.
 */

export const EMOTION_NAMES = [
  'Angry', 'Disgust', 'Fear', 'Happy', 'Sad', 'Surprise', 'Neutral',
] as const;

export type EmotionName = (typeof EMOTION_NAMES)[number];

export interface PredictionResponse {
  probabilities: number[];
  label: string;
  latency_ms: number;
  model_id: string;
}

export interface HealthResponse {
  status: string;
  model_id: string;
  param_count: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function throwApiError(resp: Response): Promise<never> {
  let code = 'unknown';
  let message = `HTTP ${resp.status}`;
  try {
    const body = (await resp.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status fallback
  }
  throw new ApiError(resp.status, code, message);
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = '';
  const step = 0x8000; // avoid call-stack limits on large arrays
  for (let i = 0; i < bytes.length; i += step) {
    binary += String.fromCharCode(...bytes.subarray(i, i + step));
  }
  return btoa(binary);
}

/**
 * Defensive renormalization: the UI never renders bars that do not sum
 * to 1. Returns how far off the input was so callers can log drift.
 */
export function normalizeProbabilities(probs: number[]): { values: number[]; correction: number } {
  const sum = probs.reduce((acc, p) => acc + p, 0);
  if (!(sum > 0)) {
    return { values: probs.map(() => 1 / probs.length), correction: 1 };
  }
  return { values: probs.map((p) => p / sum), correction: Math.abs(1 - sum) };
}

export class FerClient {
  constructor(
    public readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async health(): Promise<HealthResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/health`);
    if (!resp.ok) await throwApiError(resp);
    return (await resp.json()) as HealthResponse;
  }

  async predict(png: Uint8Array, tta = false): Promise<PredictionResponse> {
    const url = `${this.baseUrl}/predict${tta ? '?tta=1' : ''}`;
    const resp = await this.fetchFn(url, {
      method: 'POST',
      headers: { 'Content-Type': 'image/png' },
      body: png as unknown as BodyInit,
    });
    if (!resp.ok) await throwApiError(resp);
    return (await resp.json()) as PredictionResponse;
  }

  async submitSample(label: string, png: Uint8Array): Promise<{ path: string }> {
    const resp = await this.fetchFn(`${this.baseUrl}/samples`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ label, image_base64: bytesToBase64(png) }),
    });
    if (resp.status !== 201) await throwApiError(resp);
    return (await resp.json()) as { path: string };
  }
}
