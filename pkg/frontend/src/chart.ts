// Inline SVG convergence chart: per-round average and target, rendered
// purely from hub data. Returns markup so it can be unit-tested without a
// DOM.

import type { RoundPoint } from "./api.js";

const W = 640;
const H = 240;
const PAD = 36;

function scale(rounds: RoundPoint[]) {
  const xs = rounds.map((r) => r.round_index);
  const ys = rounds.flatMap((r) => [r.avg, r.target]);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMax = Math.max(...ys, 1);
  const sx = (x: number) =>
    xMax === xMin ? W / 2 : PAD + ((x - xMin) / (xMax - xMin)) * (W - 2 * PAD);
  const sy = (y: number) => H - PAD - (y / yMax) * (H - 2 * PAD);
  return { sx, sy, yMax };
}

export function renderChartSvg(rounds: RoundPoint[]): string {
  if (rounds.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}" class="chart"><text x="${W / 2}" y="${H / 2}" text-anchor="middle" class="chart-empty">no rounds yet</text></svg>`;
  }
  const { sx, sy, yMax } = scale(rounds);
  const line = (pick: (r: RoundPoint) => number) =>
    rounds.map((r) => `${sx(r.round_index).toFixed(1)},${sy(pick(r)).toFixed(1)}`).join(" ");

  const avgPoints = rounds
    .map(
      (r) =>
        `<circle data-role="avg-point" data-round="${r.round_index}" data-value="${r.avg}" ` +
        `cx="${sx(r.round_index).toFixed(1)}" cy="${sy(r.avg).toFixed(1)}" r="3.5"></circle>`,
    )
    .join("");
  const ticks = rounds
    .map(
      (r) =>
        `<text x="${sx(r.round_index).toFixed(1)}" y="${H - PAD + 16}" text-anchor="middle" class="tick">${r.round_index}</text>`,
    )
    .join("");

  return `<svg viewBox="0 0 ${W} ${H}" class="chart" role="img" aria-label="per-round average and target">
  <line x1="${PAD}" y1="${H - PAD}" x2="${W - PAD}" y2="${H - PAD}" class="axis"></line>
  <line x1="${PAD}" y1="${PAD}" x2="${PAD}" y2="${H - PAD}" class="axis"></line>
  <text x="${PAD - 8}" y="${PAD}" text-anchor="end" class="tick">${yMax.toFixed(1)}</text>
  <text x="${PAD - 8}" y="${H - PAD}" text-anchor="end" class="tick">0</text>
  <polyline class="line-target" fill="none" points="${line((r) => r.target)}"></polyline>
  <polyline class="line-avg" fill="none" points="${line((r) => r.avg)}"></polyline>
  ${avgPoints}
  ${ticks}
  <text x="${W - PAD}" y="${PAD - 14}" text-anchor="end" class="legend">
    <tspan class="legend-avg">average</tspan><tspan> / </tspan><tspan class="legend-target">target</tspan>
  </text>
</svg>`;
}
