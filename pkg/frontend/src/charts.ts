/**
 * Dependency-free SVG sparklines. Values equal the served strings parsed
 * as numbers; out-of-band samples (per the channel's own rule bounds)
 * are flagged in red, and the band itself is shaded when bounds exist.
 */

export interface Bounds {
  lower: number | null;
  upper: number | null;
}

const W = 260;
const H = 64;
const PAD = 4;

function scale(values: number[], bounds: Bounds | null): { min: number; max: number } {
  let min = Math.min(...values);
  let max = Math.max(...values);
  if (bounds) {
    if (bounds.lower !== null) min = Math.min(min, bounds.lower);
    if (bounds.upper !== null) max = Math.max(max, bounds.upper);
  }
  if (max - min < 1e-9) {
    min -= 0.5;
    max += 0.5;
  }
  return { min, max };
}

export function outOfBand(value: number, bounds: Bounds | null): boolean {
  if (!bounds) return false;
  if (bounds.lower !== null && value < bounds.lower) return true;
  if (bounds.upper !== null && value > bounds.upper) return true;
  return false;
}

export function sparkline(series: (number | null)[], bounds: Bounds | null = null): string {
  const present = series.filter((v): v is number => v !== null);
  if (present.length === 0) {
    return `<svg class="spark" viewBox="0 0 ${W} ${H}"><text x="8" y="36" class="spark-empty">no data</text></svg>`;
  }
  const { min, max } = scale(present, bounds);
  const x = (i: number) => PAD + (i * (W - 2 * PAD)) / Math.max(1, series.length - 1);
  const y = (v: number) => H - PAD - ((v - min) * (H - 2 * PAD)) / (max - min);

  let band = "";
  if (bounds && (bounds.lower !== null || bounds.upper !== null)) {
    const top = y(bounds.upper !== null ? bounds.upper : max);
    const bottom = y(bounds.lower !== null ? bounds.lower : min);
    band = `<rect class="spark-band" x="${PAD}" y="${top.toFixed(1)}" width="${W - 2 * PAD}" height="${Math.max(
      1,
      bottom - top,
    ).toFixed(1)}"/>`;
  }

  const segments: string[] = [];
  let run: string[] = [];
  series.forEach((value, i) => {
    if (value === null) {
      if (run.length > 1) segments.push(`<polyline class="spark-line" points="${run.join(" ")}"/>`);
      run = [];
      return;
    }
    run.push(`${x(i).toFixed(1)},${y(value).toFixed(1)}`);
  });
  if (run.length > 1) segments.push(`<polyline class="spark-line" points="${run.join(" ")}"/>`);

  const breaches = series
    .map((value, i) => ({ value, i }))
    .filter((p): p is { value: number; i: number } => p.value !== null && outOfBand(p.value, bounds))
    .map((p) => `<circle class="spark-breach" cx="${x(p.i).toFixed(1)}" cy="${y(p.value).toFixed(1)}" r="2"/>`)
    .join("");

  return `<svg class="spark" viewBox="0 0 ${W} ${H}">${band}${segments.join("")}${breaches}</svg>`;
}
