/**
 * Polling prediction loop with four invariants:
 *  - at most one request in flight (new frames are dropped, not queued)
 *  - a hidden tab issues zero requests
 *  - stale responses never overwrite newer renders
 *  - failures back off exponentially and recover on the next success
 */

import type { PredictionResponse } from './api.js';

export interface CapturedFrame {
  png: Uint8Array;
  capturedAt: number;
}

export interface LiveLoopDeps {
  /** Grab + encode the current frame; null when no frame is available. */
  capture: () => CapturedFrame | null;
  predict: (png: Uint8Array) => Promise<PredictionResponse>;
  render: (result: PredictionResponse, frame: CapturedFrame) => void;
  onError?: (error: unknown) => void;
  onRecover?: () => void;
  isHidden?: () => boolean;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

const INITIAL_BACKOFF_MS = 500;
const MAX_BACKOFF_MS = 8000;

export class LiveLoop {
  private running = false;
  private inFlight = false;
  private seq = 0;
  private renderedSeq = 0;
  private backoffMs = 0;
  private timer: unknown = null;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(
    private readonly deps: LiveLoopDeps,
    readonly intervalMs: number = 250,
  ) {
    this.setTimer = deps.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = deps.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    this.tick();
  }

  stop(): void {
    this.running = false;
    // anything still in flight is stale even if start() is called again
    this.renderedSeq = this.seq;
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
  }

  get failing(): boolean {
    return this.backoffMs > 0;
  }

  private schedule(): void {
    if (!this.running) return;
    // replace, never stack: a stop/start during an in-flight request can
    // otherwise leave two timers ticking at once
    if (this.timer !== null) {
      this.clearTimer(this.timer);
    }
    const delay = this.backoffMs > 0 ? this.backoffMs : this.intervalMs;
    this.timer = this.setTimer(() => {
      this.timer = null;
      this.tick();
    }, delay);
  }

  private tick(): void {
    if (!this.running) return;
    if (this.inFlight || (this.deps.isHidden?.() ?? false)) {
      this.schedule();
      return;
    }
    const frame = this.deps.capture();
    if (frame === null) {
      this.schedule();
      return;
    }
    const seq = ++this.seq;
    this.inFlight = true;
    this.deps.predict(frame.png).then(
      (result) => {
        this.inFlight = false;
        if (this.running && seq > this.renderedSeq) {
          this.renderedSeq = seq;
          if (this.backoffMs > 0) {
            this.backoffMs = 0;
            this.deps.onRecover?.();
          }
          this.deps.render(result, frame);
        }
        this.schedule();
      },
      (error) => {
        this.inFlight = false;
        this.backoffMs = this.backoffMs > 0
          ? Math.min(this.backoffMs * 2, MAX_BACKOFF_MS)
          : INITIAL_BACKOFF_MS;
        this.deps.onError?.(error);
        this.schedule();
      },
    );
  }
}
