/**
 * End-to-end tests against a real service process. Skipped by `npm run
 * test:unit`; `npm test` runs them and needs python3 plus the installed
 * `fer` CLI on PATH.
 */

import { execFileSync, spawn } from 'node:child_process';
import type { ChildProcess } from 'node:child_process';
import { existsSync, mkdirSync, mkdtempSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { ApiError, EMOTION_NAMES, FerClient } from '../src/api.js';
import { LiveLoop } from '../src/liveloop.js';
import { encodeGrayPng } from '../src/png.js';

const PORT = 8731;
const BASE = `http://127.0.0.1:${PORT}`;

let workDir: string;
let dataRoot: string;
let server: ChildProcess | null = null;
let serverLog = '';
let client: FerClient;

function whitePng(): Uint8Array {
  return encodeGrayPng(new Uint8Array(48 * 48).fill(255), 48, 48);
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => {
    setTimeout(resolve, ms);
  });
}

async function waitForHealth(deadlineMs: number): Promise<void> {
  const start = Date.now();
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.status === 200) return;
    } catch {
      // not accepting connections yet
    }
    if (Date.now() - start > deadlineMs) {
      throw new Error(`service not healthy after ${deadlineMs}ms; log:\n${serverLog}`);
    }
    await sleep(250);
  }
}

function datasetStats(): { counts: Record<string, number>; total: number } {
  const out = execFileSync('fer', ['dataset-stats', '--dir', dataRoot, '--json'], {
    encoding: 'utf8',
  });
  return JSON.parse(out) as { counts: Record<string, number>; total: number };
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), 'fer-frontend-'));
  dataRoot = join(workDir, 'collected');
  mkdirSync(dataRoot);
  const weights = join(workDir, 'model.ferw');
  execFileSync('python3', [
    '-c',
    'import sys; from ferkit.model import build_model, save_weights; '
    + "save_weights(build_model('five-layer', seed=0), sys.argv[1])",
    weights,
  ]);
  server = spawn('fer', [
    'serve',
    '--weights', weights,
    '--port', String(PORT),
    '--data-root', dataRoot,
  ]);
  server.stdout?.on('data', (chunk: Buffer) => { serverLog += chunk.toString(); });
  server.stderr?.on('data', (chunk: Buffer) => { serverLog += chunk.toString(); });
  client = new FerClient(BASE);
  await waitForHealth(90_000);
}, 120_000);

afterAll(async () => {
  if (server) {
    const exited = new Promise<void>((resolve) => {
      server!.once('close', () => resolve());
    });
    server.kill('SIGTERM');
    await Promise.race([exited, sleep(5_000)]);
    if (server.exitCode === null) server.kill('SIGKILL');
  }
  rmSync(workDir, { recursive: true, force: true });
}, 30_000);

describe('live service', () => {
  it('reports a loaded five-layer model on /health', { timeout: 15_000 }, async () => {
    const health = await client.health();
    expect(health.status).toBe('ok');
    expect(health.model_id).toBe('five-layer');
    expect(health.param_count).toBe(2_438_311);
  });

  it('predicts a browser-encoded white frame', { timeout: 15_000 }, async () => {
    const result = await client.predict(whitePng());
    expect(result.probabilities).toHaveLength(7);
    for (const p of result.probabilities) {
      expect(p).toBeGreaterThanOrEqual(0);
      expect(p).toBeLessThanOrEqual(1);
    }
    const sum = result.probabilities.reduce((a, p) => a + p, 0);
    expect(Math.abs(sum - 1)).toBeLessThan(1e-5);
    expect(EMOTION_NAMES).toContain(result.label);
    expect(result.latency_ms).toBeGreaterThanOrEqual(0);
    expect(result.model_id).toBe('five-layer');
  });

  it('predicts identically for identical frames', { timeout: 15_000 }, async () => {
    const a = await client.predict(whitePng());
    const b = await client.predict(whitePng());
    expect(a.probabilities).toEqual(b.probabilities);
  });

  it('renders a live prediction within 500ms of capture', { timeout: 15_000 }, async () => {
    let resolveElapsed!: (ms: number) => void;
    let rejectElapsed!: (e: unknown) => void;
    const elapsed = new Promise<number>((resolve, reject) => {
      resolveElapsed = resolve;
      rejectElapsed = reject;
    });
    const loop = new LiveLoop({
      capture: () => ({ png: whitePng(), capturedAt: performance.now() }),
      predict: (png) => client.predict(png),
      render: (_result, frame) => resolveElapsed(performance.now() - frame.capturedAt),
      onError: (e) => rejectElapsed(e),
    }, 100);
    loop.start();
    try {
      expect(await elapsed).toBeLessThan(500);
    } finally {
      loop.stop();
    }
  });

  it('stores a labeled sample and bumps the class count by one', { timeout: 20_000 }, async () => {
    const first = await client.submitSample('Happy', whitePng());
    expect(first.path).toMatch(/^happy\/.+\.png$/);
    expect(existsSync(join(dataRoot, first.path))).toBe(true);

    const before = datasetStats();
    const second = await client.submitSample('Happy', whitePng());
    expect(second.path).not.toBe(first.path);
    expect(existsSync(join(dataRoot, second.path))).toBe(true);

    const after = datasetStats();
    expect(after.counts.Happy).toBe(before.counts.Happy + 1);
    expect(after.total).toBe(before.total + 1);
  });

  it('rejects an unknown label with the server message intact', { timeout: 15_000 }, async () => {
    const err = await client.submitSample('Joyful', whitePng()).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).code).toBe('bad_label');
    expect((err as ApiError).message).toContain('Joyful');
    expect((err as ApiError).message).toContain('Happy');
  });
});
