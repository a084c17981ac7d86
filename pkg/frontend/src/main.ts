/**
 * Browser entry point: webcam preview with a draggable crop square,
 * a live prediction loop against the HTTP service, and a
 * snapshot-then-label flow for contributing training samples.
 */

import { EMOTION_NAMES, FerClient, ApiError, normalizeProbabilities } from './api.js';
import type { PredictionResponse } from './api.js';
import { LiveLoop } from './liveloop.js';
import type { CapturedFrame } from './liveloop.js';
import { TARGET_SIZE, clampCrop, processFrame, unitToBytes } from './pipeline.js';
import type { CropRect } from './pipeline.js';
import { encodeGrayPng } from './png.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function serviceBaseUrl(): string {
  const param = new URLSearchParams(window.location.search).get('service');
  return param ? param.replace(/\/+$/, '') : 'http://localhost:8000';
}

class App {
  private readonly client = new FerClient(serviceBaseUrl());
  private readonly video = el<HTMLVideoElement>('video');
  private readonly overlay = el<HTMLCanvasElement>('overlay');
  private readonly banner = el<HTMLDivElement>('banner');
  private readonly topLabel = el<HTMLDivElement>('top-label');
  private readonly latency = el<HTMLDivElement>('latency');
  private readonly bars = el<HTMLDivElement>('bars');
  private readonly snapshotButton = el<HTMLButtonElement>('snapshot');
  private readonly snapshotPreview = el<HTMLCanvasElement>('snapshot-preview');
  private readonly labelSelect = el<HTMLSelectElement>('label-select');
  private readonly submitButton = el<HTMLButtonElement>('submit');
  private readonly submitStatus = el<HTMLDivElement>('submit-status');
  private readonly counters = el<HTMLDivElement>('counters');

  // single reusable scratch canvas for frame grabs
  private readonly grabCanvas = document.createElement('canvas');
  private crop: CropRect = { x: 0, y: 0, size: 1 };
  private dragging = false;
  private snapshotPng: Uint8Array | null = null;
  private readonly sessionCounts = new Map<string, number>();
  private readonly barFills: HTMLDivElement[] = [];
  private readonly barValues: HTMLSpanElement[] = [];

  private readonly loop = new LiveLoop({
    capture: () => this.captureFrame(),
    predict: (png) => this.client.predict(png),
    render: (result, frame) => this.renderPrediction(result, frame),
    onError: (error) => this.showBanner(describeError(error)),
    onRecover: () => this.hideBanner(),
    isHidden: () => document.hidden,
  });

  async start(): Promise<void> {
    this.buildBars();
    this.buildLabelOptions();
    this.wireCropDrag();
    this.snapshotButton.addEventListener('click', () => this.takeSnapshot());
    this.submitButton.addEventListener('click', () => void this.submitSnapshot());
    this.submitButton.disabled = true;

    try {
      // a 503 before weights load surfaces here as an ApiError
      await this.client.health();
    } catch (error) {
      this.showBanner(`Cannot reach service at ${this.client.baseUrl}: ${describeError(error)}`);
    }

    try {
      const stream = await navigator.mediaDevices.getUserMedia({ video: true, audio: false });
      this.video.srcObject = stream;
      await this.video.play();
    } catch (error) {
      this.showBanner(`Camera unavailable: ${describeError(error)}`);
      return;
    }

    this.resetCrop();
    this.drawOverlayLoop();
    this.loop.start();
  }

  private buildBars(): void {
    for (const name of EMOTION_NAMES) {
      const row = document.createElement('div');
      row.className = 'bar-row';
      const label = document.createElement('span');
      label.className = 'bar-label';
      label.textContent = name;
      const track = document.createElement('div');
      track.className = 'bar-track';
      const fill = document.createElement('div');
      fill.className = 'bar-fill';
      track.appendChild(fill);
      const value = document.createElement('span');
      value.className = 'bar-value';
      value.textContent = '0%';
      row.append(label, track, value);
      this.bars.appendChild(row);
      this.barFills.push(fill);
      this.barValues.push(value);
    }
  }

  private buildLabelOptions(): void {
    for (const name of EMOTION_NAMES) {
      const option = document.createElement('option');
      option.value = name;
      option.textContent = name;
      this.labelSelect.appendChild(option);
    }
  }

  private resetCrop(): void {
    const w = this.video.videoWidth;
    const h = this.video.videoHeight;
    const size = Math.floor(Math.min(w, h) * 0.8);
    this.crop = clampCrop(
      { x: Math.floor((w - size) / 2), y: Math.floor((h - size) / 2), size },
      w,
      h,
    );
    this.overlay.width = w;
    this.overlay.height = h;
  }

  private wireCropDrag(): void {
    const toVideoCoords = (event: PointerEvent): { x: number; y: number } => {
      const rect = this.overlay.getBoundingClientRect();
      return {
        x: ((event.clientX - rect.left) / rect.width) * this.overlay.width,
        y: ((event.clientY - rect.top) / rect.height) * this.overlay.height,
      };
    };
    this.overlay.addEventListener('pointerdown', (event) => {
      this.dragging = true;
      this.overlay.setPointerCapture(event.pointerId);
      const p = toVideoCoords(event);
      this.moveCropCenter(p.x, p.y);
    });
    this.overlay.addEventListener('pointermove', (event) => {
      if (!this.dragging) return;
      const p = toVideoCoords(event);
      this.moveCropCenter(p.x, p.y);
    });
    this.overlay.addEventListener('pointerup', () => {
      this.dragging = false;
    });
    this.overlay.addEventListener('wheel', (event) => {
      event.preventDefault();
      const grow = event.deltaY < 0 ? 1.05 : 0.95;
      const size = Math.max(16, Math.round(this.crop.size * grow));
      const cx = this.crop.x + this.crop.size / 2;
      const cy = this.crop.y + this.crop.size / 2;
      this.crop = clampCrop(
        { x: Math.round(cx - size / 2), y: Math.round(cy - size / 2), size },
        this.overlay.width,
        this.overlay.height,
      );
    });
  }

  private moveCropCenter(cx: number, cy: number): void {
    this.crop = clampCrop(
      {
        x: Math.round(cx - this.crop.size / 2),
        y: Math.round(cy - this.crop.size / 2),
        size: this.crop.size,
      },
      this.overlay.width,
      this.overlay.height,
    );
  }

  private drawOverlayLoop(): void {
    const ctx = this.overlay.getContext('2d');
    if (!ctx) return;
    const draw = () => {
      ctx.clearRect(0, 0, this.overlay.width, this.overlay.height);
      ctx.strokeStyle = '#4caf50';
      ctx.lineWidth = 3;
      ctx.strokeRect(this.crop.x, this.crop.y, this.crop.size, this.crop.size);
      requestAnimationFrame(draw);
    };
    requestAnimationFrame(draw);
  }

  /** Grab the crop region from the video and encode it as a 48x48 gray PNG. */
  private captureFrame(): CapturedFrame | null {
    const w = this.video.videoWidth;
    const h = this.video.videoHeight;
    if (w === 0 || h === 0) return null;
    if (this.grabCanvas.width !== w || this.grabCanvas.height !== h) {
      this.grabCanvas.width = w;
      this.grabCanvas.height = h;
    }
    const ctx = this.grabCanvas.getContext('2d', { willReadFrequently: true });
    if (!ctx) return null;
    ctx.drawImage(this.video, 0, 0, w, h);
    const image = ctx.getImageData(0, 0, w, h);
    const crop = clampCrop(this.crop, w, h);
    const processed = processFrame(image.data, w, h, crop);
    const bytes = unitToBytes(processed.values);
    return {
      png: encodeGrayPng(bytes, TARGET_SIZE, TARGET_SIZE),
      capturedAt: performance.now(),
    };
  }

  private renderPrediction(result: PredictionResponse, frame: CapturedFrame): void {
    const { values, correction } = normalizeProbabilities(result.probabilities);
    if (correction > 1e-3) {
      console.warn(`probabilities renormalized, correction ${correction.toExponential(2)}`);
    }
    for (let i = 0; i < EMOTION_NAMES.length; i++) {
      const pct = values[i] * 100;
      this.barFills[i].style.width = `${pct.toFixed(1)}%`;
      this.barValues[i].textContent = `${pct.toFixed(1)}%`;
    }
    this.topLabel.textContent = result.label;
    const roundTrip = performance.now() - frame.capturedAt;
    this.latency.textContent =
      `model ${result.latency_ms.toFixed(1)} ms / round trip ${roundTrip.toFixed(0)} ms`;
  }

  private takeSnapshot(): void {
    const frame = this.captureFrame();
    if (!frame) {
      this.showBanner('No frame available to snapshot.');
      return;
    }
    this.snapshotPng = frame.png;
    this.submitButton.disabled = false;
    this.submitStatus.textContent = 'Snapshot ready. Pick a label and submit.';
    this.paintSnapshotPreview();
  }

  private paintSnapshotPreview(): void {
    // re-grab the processed pixels for display; cheaper than decoding the PNG
    const w = this.video.videoWidth;
    const h = this.video.videoHeight;
    const ctx = this.grabCanvas.getContext('2d', { willReadFrequently: true });
    const preview = this.snapshotPreview.getContext('2d');
    if (!ctx || !preview || w === 0) return;
    const image = ctx.getImageData(0, 0, w, h);
    const processed = processFrame(image.data, w, h, clampCrop(this.crop, w, h));
    const bytes = unitToBytes(processed.values);
    const out = preview.createImageData(TARGET_SIZE, TARGET_SIZE);
    for (let i = 0; i < bytes.length; i++) {
      out.data[i * 4] = bytes[i];
      out.data[i * 4 + 1] = bytes[i];
      out.data[i * 4 + 2] = bytes[i];
      out.data[i * 4 + 3] = 255;
    }
    preview.putImageData(out, 0, 0);
  }

  private async submitSnapshot(): Promise<void> {
    if (!this.snapshotPng) return;
    const label = this.labelSelect.value;
    this.submitButton.disabled = true;
    try {
      const stored = await this.client.submitSample(label, this.snapshotPng);
      const count = (this.sessionCounts.get(label) ?? 0) + 1;
      this.sessionCounts.set(label, count);
      this.submitStatus.textContent = `Stored as ${stored.path}`;
      this.renderCounters();
      this.snapshotPng = null;
    } catch (error) {
      if (error instanceof ApiError) {
        // server-side validation message, shown verbatim
        this.submitStatus.textContent = error.message;
      } else {
        this.showBanner(`Submit failed: ${describeError(error)}`);
      }
      this.submitButton.disabled = false;
    }
  }

  private renderCounters(): void {
    const parts: string[] = [];
    for (const name of EMOTION_NAMES) {
      const count = this.sessionCounts.get(name);
      if (count) parts.push(`${name}: ${count}`);
    }
    this.counters.textContent = parts.length
      ? `Submitted this session - ${parts.join(', ')}`
      : '';
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.style.display = 'block';
  }

  private hideBanner(): void {
    this.banner.style.display = 'none';
  }
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  if (error instanceof Error) return error.message;
  return String(error);
}

void new App().start();
