/**
 * Deterministic SVG primitives. No randomness, no timestamps, no locale
 * formatting: the same inputs always serialize to the identical byte string.
 */

/** Fixed palette; a tenant's color is keyed by its index in sorted order. */
export const PALETTE = [
  '#4c72b0',
  '#dd8452',
  '#55a868',
  '#c44e52',
  '#8172b3',
  '#937860',
  '#da8bc3',
  '#8c8c8c',
  '#ccb974',
  '#64b5cd',
] as const;

export function colorFor(index: number): string {
  return PALETTE[index % PALETTE.length];
}

export function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

/** Fixed-precision coordinate so float noise can never alter the output. */
export function num(x: number): string {
  return Number(x.toFixed(2)).toString();
}

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export const DEFAULT_FRAME: Frame = {
  width: 640,
  height: 400,
  left: 64,
  right: 16,
  top: 40,
  bottom: 56,
};

export function plotWidth(f: Frame): number {
  return f.width - f.left - f.right;
}

export function plotHeight(f: Frame): number {
  return f.height - f.top - f.bottom;
}

/** Round a positive ceiling up to 1/2/5 x 10^k so axes stay tidy. */
export function niceCeiling(value: number): number {
  if (value <= 0) {
    return 1;
  }
  const mag = Math.pow(10, Math.floor(Math.log10(value)));
  for (const m of [1, 2, 5, 10]) {
    if (value <= m * mag) {
      return m * mag;
    }
  }
  return 10 * mag;
}

export function linearTicks(max: number, count = 5): number[] {
  const top = niceCeiling(max);
  const ticks: number[] = [];
  for (let i = 0; i <= count; i++) {
    ticks.push((top * i) / count);
  }
  return ticks;
}

/** Powers of two covering [min, max]; the x-axis for size sweeps. */
export function log2Ticks(min: number, max: number): number[] {
  const lo = Math.floor(Math.log2(Math.max(1, min)));
  const hi = Math.ceil(Math.log2(Math.max(1, max)));
  const ticks: number[] = [];
  for (let e = lo; e <= hi; e++) {
    ticks.push(Math.pow(2, e));
  }
  return ticks;
}

export function formatTick(v: number): string {
  if (Number.isInteger(v)) {
    if (Math.abs(v) >= 1_000_000) {
      return `${v / 1_000_000}M`;
    }
    if (Math.abs(v) >= 10_000) {
      return `${v / 1000}k`;
    }
    return v.toString();
  }
  return Number(v.toFixed(3)).toString();
}

export function openSvg(f: Frame, title: string): string[] {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${f.width}" height="${f.height}" viewBox="0 0 ${f.width} ${f.height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect x="0" y="0" width="${f.width}" height="${f.height}" fill="#ffffff"/>`,
    `<title>${esc(title)}</title>`,
    `<text x="${f.width / 2}" y="24" text-anchor="middle" font-size="15" fill="#222222">${esc(title)}</text>`,
  ];
}

export function axes(f: Frame, xLabel: string, yLabel: string): string[] {
  const x0 = f.left;
  const y0 = f.height - f.bottom;
  const x1 = f.width - f.right;
  const y1 = f.top;
  return [
    `<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="#222222" stroke-width="1"/>`,
    `<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="#222222" stroke-width="1"/>`,
    `<text x="${(x0 + x1) / 2}" y="${f.height - 12}" text-anchor="middle" font-size="12" fill="#222222">${esc(xLabel)}</text>`,
    `<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" font-size="12" fill="#222222" transform="rotate(-90 16 ${(y0 + y1) / 2})">${esc(yLabel)}</text>`,
  ];
}

export function yGrid(f: Frame, ticks: number[], yMax: number): string[] {
  const parts: string[] = [];
  const y0 = f.height - f.bottom;
  const h = plotHeight(f);
  for (const t of ticks) {
    const y = y0 - (yMax === 0 ? 0 : (t / yMax) * h);
    parts.push(
      `<line x1="${f.left}" y1="${num(y)}" x2="${f.width - f.right}" y2="${num(y)}" stroke="#dddddd" stroke-width="0.5"/>`,
      `<text x="${f.left - 6}" y="${num(y + 4)}" text-anchor="end" font-size="11" fill="#222222">${formatTick(t)}</text>`,
    );
  }
  return parts;
}

export function legend(f: Frame, names: string[]): string[] {
  const parts: string[] = [];
  let x = f.left + 4;
  const y = f.top - 8;
  names.forEach((name, i) => {
    parts.push(
      `<rect x="${num(x)}" y="${y - 9}" width="10" height="10" fill="${colorFor(i)}"/>`,
      `<text x="${num(x + 14)}" y="${y}" font-size="11" fill="#222222">${esc(name)}</text>`,
    );
    x += 14 + 7 * name.length + 18;
  });
  return parts;
}
