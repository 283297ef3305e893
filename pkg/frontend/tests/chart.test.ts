import { describe, expect, it } from "vitest";

import { renderChartSvg } from "../src/chart.js";

const rounds = [
  { round_index: 1, avg: 25.4, target: 16.9 },
  { round_index: 2, avg: 9.7, target: 6.5 },
  { round_index: 3, avg: 3.7, target: 2.5 },
  { round_index: 4, avg: 1.4, target: 0.9 },
  { round_index: 5, avg: 0.5, target: 0.4 },
];

describe("convergence chart", () => {
  it("renders one point per round with the hub's values verbatim", () => {
    const svg = renderChartSvg(rounds);
    const points = [...svg.matchAll(/data-role="avg-point"/g)];
    expect(points).toHaveLength(5);
    for (const r of rounds) {
      expect(svg).toContain(`data-value="${r.avg}"`);
    }
    expect(svg).toContain("polyline");
    expect(svg.match(/<polyline/g)).toHaveLength(2); // avg and target lines
  });

  it("places decreasing averages at increasing y coordinates", () => {
    const svg = renderChartSvg(rounds);
    const ys = [...svg.matchAll(/data-role="avg-point"[^>]*cy="([0-9.]+)"/g)].map((m) =>
      Number(m[1]),
    );
    expect(ys).toHaveLength(5);
    for (let i = 1; i < ys.length; i++) {
      expect(ys[i]!).toBeGreaterThan(ys[i - 1]!); // lower value = lower on screen
    }
  });

  it("renders an empty-state message without rounds", () => {
    expect(renderChartSvg([])).toContain("no rounds yet");
  });
});
