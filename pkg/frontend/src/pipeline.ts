/**
 * Pure frame-processing pipeline: crop -> bilinear resize to 48x48 ->
 * BT.601 grayscale -> [0,1]. No DOM types so it is unit-testable in node;
 * callers hand in raw RGBA bytes (e.g. from ImageData.data).
 */

export const TARGET_SIZE = 48;

// BT.601 luminance weights
const R_WEIGHT = 0.299;
const G_WEIGHT = 0.587;
const B_WEIGHT = 0.114;

export interface CropRect {
  x: number;
  y: number;
  size: number;
}

export interface ProcessedFrame {
  /** 48x48 grayscale values in [0,1], row-major */
  values: Float32Array;
  width: number;
  height: number;
}

export function validateCrop(crop: CropRect, frameWidth: number, frameHeight: number): void {
  if (!Number.isFinite(crop.x) || !Number.isFinite(crop.y) || !Number.isFinite(crop.size)) {
    throw new Error(`crop must be finite, got ${JSON.stringify(crop)}`);
  }
  if (crop.size <= 0) {
    throw new Error(`crop size must be positive, got ${crop.size}`);
  }
  if (crop.x < 0 || crop.y < 0 || crop.x + crop.size > frameWidth || crop.y + crop.size > frameHeight) {
    throw new Error(
      `crop ${crop.x},${crop.y} size ${crop.size} outside ${frameWidth}x${frameHeight} frame`);
  }
}

/**
 * Clamp a crop rect into the frame, preserving its size where possible.
 * UI helper for drag interactions; never throws.
 */
export function clampCrop(crop: CropRect, frameWidth: number, frameHeight: number): CropRect {
  const size = Math.max(1, Math.min(crop.size, frameWidth, frameHeight));
  const x = Math.max(0, Math.min(crop.x, frameWidth - size));
  const y = Math.max(0, Math.min(crop.y, frameHeight - size));
  return { x, y, size };
}

function sampleBilinear(
  data: Uint8ClampedArray | Uint8Array,
  width: number,
  sx: number,
  sy: number,
  maxX: number,
  maxY: number,
  channel: number,
): number {
  const x0 = Math.floor(sx);
  const y0 = Math.floor(sy);
  const x1 = Math.min(x0 + 1, maxX);
  const y1 = Math.min(y0 + 1, maxY);
  const fx = sx - x0;
  const fy = sy - y0;
  const row0 = y0 * width;
  const row1 = y1 * width;
  const v00 = data[(row0 + x0) * 4 + channel];
  const v01 = data[(row0 + x1) * 4 + channel];
  const v10 = data[(row1 + x0) * 4 + channel];
  const v11 = data[(row1 + x1) * 4 + channel];
  const top = v00 + (v01 - v00) * fx;
  const bottom = v10 + (v11 - v10) * fx;
  return top + (bottom - top) * fy;
}

/**
 * Crop a square region out of an RGBA frame and reduce it to the model's
 * 48x48 [0,1] grayscale input.
 */
export function processFrame(
  data: Uint8ClampedArray | Uint8Array,
  frameWidth: number,
  frameHeight: number,
  crop: CropRect,
): ProcessedFrame {
  validateCrop(crop, frameWidth, frameHeight);
  if (data.length !== frameWidth * frameHeight * 4) {
    throw new Error(
      `expected ${frameWidth * frameHeight * 4} RGBA bytes, got ${data.length}`);
  }
  const values = new Float32Array(TARGET_SIZE * TARGET_SIZE);
  const scale = crop.size / TARGET_SIZE;
  const maxX = frameWidth - 1;
  const maxY = frameHeight - 1;
  for (let ty = 0; ty < TARGET_SIZE; ty++) {
    // pixel-center mapping; scale 1 degenerates to an exact copy
    let sy = crop.y + (ty + 0.5) * scale - 0.5;
    sy = Math.min(Math.max(sy, 0), maxY);
    for (let tx = 0; tx < TARGET_SIZE; tx++) {
      let sx = crop.x + (tx + 0.5) * scale - 0.5;
      sx = Math.min(Math.max(sx, 0), maxX);
      const r = sampleBilinear(data, frameWidth, sx, sy, maxX, maxY, 0);
      const g = sampleBilinear(data, frameWidth, sx, sy, maxX, maxY, 1);
      const b = sampleBilinear(data, frameWidth, sx, sy, maxX, maxY, 2);
      const gray = (R_WEIGHT * r + G_WEIGHT * g + B_WEIGHT * b) / 255;
      values[ty * TARGET_SIZE + tx] = Math.min(Math.max(gray, 0), 1);
    }
  }
  return { values, width: TARGET_SIZE, height: TARGET_SIZE };
}

/** [0,1] floats -> 8-bit bytes, round-half-up like the service expects. */
export function unitToBytes(values: Float32Array): Uint8Array {
  const out = new Uint8Array(values.length);
  for (let i = 0; i < values.length; i++) {
    out[i] = Math.min(255, Math.max(0, Math.round(values[i] * 255)));
  }
  return out;
}
