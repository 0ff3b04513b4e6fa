// Inline SVG chart of the metrics history: suspensions (left scale) and
// byte estimate (right scale). A memory leak shows up as either line
// climbing instead of staying flat.

import { Sample } from "./model.js";

export interface ChartOptions {
  width?: number;
  height?: number;
}

export function renderChart(history: Sample[], options: ChartOptions = {}): string {
  const width = options.width ?? 640;
  const height = options.height ?? 160;
  const pad = 6;
  if (history.length === 0) {
    return (
      `<svg viewBox="0 0 ${width} ${height}" class="chart" role="img">` +
      `<text x="${width / 2}" y="${height / 2}" text-anchor="middle">no samples yet</text></svg>`
    );
  }
  const suspensions = history.map((s) => s.liveSuspensions);
  const bytes = history.map((s) => s.suspensionBytesEstimate);
  const lineA = polyline(suspensions, width, height, pad);
  const lineB = polyline(bytes, width, height, pad);
  const latest = history[history.length - 1]!;
  return (
    `<svg viewBox="0 0 ${width} ${height}" class="chart" role="img">` +
    `<polyline points="${lineB}" fill="none" stroke="#888" stroke-width="1.5"/>` +
    `<polyline points="${lineA}" fill="none" stroke="#0a6" stroke-width="1.5"/>` +
    `<text x="${pad}" y="12">suspensions: ${latest.liveSuspensions}` +
    ` | bytes: ${latest.suspensionBytesEstimate}</text>` +
    `</svg>`
  );
}

function polyline(values: number[], width: number, height: number, pad: number): string {
  const max = Math.max(...values, 1);
  const min = Math.min(...values, 0);
  const span = max - min || 1;
  const innerW = width - pad * 2;
  const innerH = height - pad * 2 - 14; // leave room for the caption line
  const stepX = values.length > 1 ? innerW / (values.length - 1) : 0;
  return values
    .map((v, i) => {
      const x = pad + i * stepX;
      const y = pad + 14 + innerH - ((v - min) / span) * innerH;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
