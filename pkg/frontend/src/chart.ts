// Interactive-trajectory chart: one point per predict call, showing how
// Dice (left axis, fixed [0, 1]) and FPV/FNV (right axis) respond to
// accumulating clicks. Data handling is pure; drawing is a thin canvas
// layer in the viewer.

import type { Metrics } from "./types.js";

export interface ChartPoint {
  k: number;
  dice: number;
  fpv_ml: number;
  fnv_ml: number;
}

export function appendPoint(
  points: ChartPoint[],
  k: number,
  metrics: Metrics,
): ChartPoint[] {
  return [...points, { k, ...metrics }];
}

export interface ChartScale {
  xOf(k: number): number;
  diceY(v: number): number;
  volumeY(v: number): number;
  kMax: number;
  volumeMax: number;
}

export function chartScale(
  points: ChartPoint[],
  width: number,
  height: number,
  pad: number = 28,
): ChartScale {
  const kMax = Math.max(10, ...points.map((p) => p.k));
  const volumeMax = Math.max(
    1,
    ...points.map((p) => Math.max(p.fpv_ml, p.fnv_ml)),
  );
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  return {
    xOf: (k) => pad + (k / kMax) * innerW,
    diceY: (v) => pad + (1 - v) * innerH, // dice axis fixed to [0, 1]
    volumeY: (v) => pad + (1 - v / volumeMax) * innerH,
    kMax,
    volumeMax,
  };
}

export function polyline(
  points: ChartPoint[],
  scale: ChartScale,
  series: "dice" | "fpv_ml" | "fnv_ml",
): Array<{ x: number; y: number }> {
  return points.map((p) => ({
    x: scale.xOf(p.k),
    y: series === "dice" ? scale.diceY(p.dice) : scale.volumeY(p[series]),
  }));
}

export function drawChart(
  canvas: HTMLCanvasElement,
  points: ChartPoint[],
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#111418";
  ctx.fillRect(0, 0, width, height);
  const scale = chartScale(points, width, height);

  ctx.strokeStyle = "#39414d";
  ctx.strokeRect(28, 28, width - 56, height - 56);
  ctx.fillStyle = "#8a93a0";
  ctx.font = "11px sans-serif";
  ctx.fillText("dice", 4, 38);
  ctx.fillText("ml", width - 22, 38);
  ctx.fillText("clicks (k)", width / 2 - 24, height - 8);

  const seriesSpec: Array<{
    key: "dice" | "fpv_ml" | "fnv_ml";
    color: string;
  }> = [
    { key: "dice", color: "#4cc38a" },
    { key: "fpv_ml", color: "#e5484d" },
    { key: "fnv_ml", color: "#0091ff" },
  ];
  for (const { key, color } of seriesSpec) {
    const pts = polyline(points, scale, key);
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    pts.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
    for (const p of pts) {
      ctx.beginPath();
      ctx.arc(p.x, p.y, 2.5, 0, Math.PI * 2);
      ctx.fill();
    }
  }
}
