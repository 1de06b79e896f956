// Dependency-free SVG line chart: series of numeric points in, markup out.

export interface ChartSeries {
  label: string;
  points: [number, number][];
}

export interface ChartGeometry {
  width: number;
  height: number;
  padding: number;
}

const PALETTE = ["#2a7de1", "#e1662a", "#2ab36b", "#a12ae1", "#e12a5c", "#888822"];

export function seriesColor(index: number): string {
  return PALETTE[index % PALETTE.length];
}

export interface Scaling {
  x: (ts: number) => number;
  y: (value: number) => number;
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function scaling(series: ChartSeries[], geometry: ChartGeometry): Scaling | null {
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) return null;
  let tMin = Infinity, tMax = -Infinity, vMin = Infinity, vMax = -Infinity;
  for (const [t, v] of all) {
    tMin = Math.min(tMin, t);
    tMax = Math.max(tMax, t);
    vMin = Math.min(vMin, v);
    vMax = Math.max(vMax, v);
  }
  if (tMax === tMin) tMax = tMin + 1;
  if (vMax === vMin) {
    vMax += 0.5;
    vMin -= 0.5;
  }
  const { width, height, padding } = geometry;
  return {
    x: (t) => padding + ((t - tMin) / (tMax - tMin)) * (width - 2 * padding),
    y: (v) => height - padding - ((v - vMin) / (vMax - vMin)) * (height - 2 * padding),
    tMin, tMax, vMin, vMax,
  };
}

export function polylinePoints(points: [number, number][], scale: Scaling): string {
  return points.map(([t, v]) => `${scale.x(t).toFixed(1)},${scale.y(v).toFixed(1)}`).join(" ");
}

export function chartSvg(series: ChartSeries[], geometry: ChartGeometry): string {
  const { width, height, padding } = geometry;
  const scale = scaling(series, geometry);
  const parts: string[] = [
    `<svg viewBox="0 0 ${width} ${height}" xmlns="http://www.w3.org/2000/svg" role="img">`,
  ];
  if (scale === null) {
    parts.push(
      `<text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="empty">no data in this window</text>`,
    );
  } else {
    parts.push(
      `<line x1="${padding}" y1="${height - padding}" x2="${width - padding}" y2="${height - padding}" class="axis"/>`,
      `<line x1="${padding}" y1="${padding}" x2="${padding}" y2="${height - padding}" class="axis"/>`,
      `<text x="${padding}" y="${padding - 4}" class="tick">${scale.vMax.toPrecision(4)}</text>`,
      `<text x="${padding}" y="${height - padding + 12}" class="tick">${scale.vMin.toPrecision(4)}</text>`,
    );
    series.forEach((s, index) => {
      if (s.points.length === 0) return;
      parts.push(
        `<polyline fill="none" stroke="${seriesColor(index)}" stroke-width="1.5" points="${polylinePoints(s.points, scale)}"/>`,
      );
    });
  }
  parts.push("</svg>");
  return parts.join("");
}
