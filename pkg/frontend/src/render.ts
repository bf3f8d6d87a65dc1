// Pure view-model builders, kept DOM-free so they run under node tests.
// The DOM layer only copies these structures onto canvases and lists.

import type { QueueItem } from './api.js';

export interface HeatmapView {
  kind: 'heatmap';
  width: number;
  height: number;
  /** Row-major grayscale bytes, 0 = min feature value, 255 = max. */
  pixels: Uint8ClampedArray;
}

export interface FeatureBar {
  name: string;
  value: number;
}

export interface BarsView {
  kind: 'bars';
  bars: FeatureBar[];
}

export interface ErrorView {
  kind: 'error';
  message: string;
}

export type InstanceView = HeatmapView | BarsView | ErrorView;

/** The square side when a vector reshapes to one, else null (e.g. 784 -> 28). */
export function squareSide(length: number): number | null {
  if (length < 4) return null;
  const side = Math.round(Math.sqrt(length));
  return side * side === length ? side : null;
}

function toHeatmap(features: number[], width: number, height: number): HeatmapView {
  let min = Infinity;
  let max = -Infinity;
  for (const v of features) {
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const span = max - min;
  const pixels = new Uint8ClampedArray(features.length);
  for (let i = 0; i < features.length; i++) {
    pixels[i] = span === 0 ? 0 : Math.round(((features[i] - min) / span) * 255);
  }
  return { kind: 'heatmap', width, height, pixels };
}

export function featureBars(features: number[], limit = 12): FeatureBar[] {
  return features
    .map((value, i) => ({ name: `f${i}`, value }))
    .sort((a, b) => Math.abs(b.value) - Math.abs(a.value))
    .slice(0, limit);
}

/** Build the visual for one queue card; malformed payloads become error cards. */
export function describeItem(item: QueueItem): InstanceView {
  const features = item.features;
  if (!Array.isArray(features) || features.length === 0 || features.some((v) => typeof v !== 'number' || !isFinite(v))) {
    return { kind: 'error', message: `instance ${item.index}: malformed feature payload` };
  }
  if (item.image_shape && item.image_shape.length === 2) {
    const [rows, cols] = item.image_shape;
    if (rows * cols === features.length) {
      return toHeatmap(features, cols, rows);
    }
    return { kind: 'error', message: `instance ${item.index}: image shape ${rows}x${cols} does not match ${features.length} features` };
  }
  const side = squareSide(features.length);
  if (side !== null) {
    return toHeatmap(features, side, side);
  }
  return { kind: 'bars', bars: featureBars(features) };
}

/** Map a discovery curve onto SVG polyline points for a width x height box. */
export function curvePoints(
  curve: [number, number][],
  width: number,
  height: number,
  budgetTotal: number,
): string {
  if (curve.length === 0 || budgetTotal === 0) return '';
  const maxFound = Math.max(1, ...curve.map(([, found]) => found));
  const pts = [`0,${height}`];
  for (const [spent, found] of curve) {
    const x = (spent / budgetTotal) * width;
    const y = height - (found / maxFound) * height;
    pts.push(`${x.toFixed(1)},${y.toFixed(1)}`);
  }
  return pts.join(' ');
}

export function formatScore(value: number | null): string {
  if (value === null) return '-';
  return value >= 0.01 && value < 1000 ? value.toFixed(3) : value.toExponential(2);
}
