/**
 * Pure SVG assembly for log2-log2 convergence panels: one panel per theta,
 * the RMS-error polyline, dashed reference-order lines anchored at the
 * coarsest data point, and the fitted slope annotated verbatim from the
 * CSV.  Everything is deterministic string building.
 */

import { Report } from "./csv.js";

const PANEL_W = 320;
const PANEL_H = 320;
const MARGIN = { left: 58, right: 18, top: 46, bottom: 48 };
const DASH = "6,4";

function px(value: number): string {
  return value.toFixed(2);
}

interface Scale {
  x: (v: number) => number;
  y: (v: number) => number;
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

function makeScale(
  xs: number[],
  ys: number[],
  originX: number
): Scale {
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys) - 0.4;
  const yMax = Math.max(...ys) + 0.4;
  const plotW = PANEL_W - MARGIN.left - MARGIN.right;
  const plotH = PANEL_H - MARGIN.top - MARGIN.bottom;
  const spanX = xMax - xMin || 1;
  const spanY = yMax - yMin || 1;
  return {
    x: (v) => originX + MARGIN.left + ((v - xMin) / spanX) * plotW,
    y: (v) => MARGIN.top + ((yMax - v) / spanY) * plotH,
    xMin,
    xMax,
    yMin,
    yMax,
  };
}

function formatTheta(theta: number): string {
  return String(theta);
}

function panelSvg(
  report: Report,
  theta: number,
  refSlopes: number[],
  index: number
): string {
  const rows = report.rows
    .filter((r) => r.theta === theta)
    .slice()
    .sort((a, b) => a.delta - b.delta);
  const xs = rows.map((r) => Math.log2(r.delta));
  const ys = rows.map((r) => Math.log2(r.rms));
  // anchor at the coarsest point (largest delta)
  const xAnchor = xs[xs.length - 1];
  const yAnchor = ys[ys.length - 1];
  const refYs = refSlopes.flatMap((s) => [
    yAnchor + s * (Math.min(...xs) - xAnchor),
    yAnchor,
  ]);
  const originX = index * PANEL_W;
  const scale = makeScale(xs, [...ys, ...refYs], originX);

  const parts: string[] = [];
  parts.push(
    `<g class="panel" data-theta="${formatTheta(theta)}">`
  );
  const left = originX + MARGIN.left;
  const right = originX + PANEL_W - MARGIN.right;
  const top = MARGIN.top;
  const bottom = PANEL_H - MARGIN.bottom;
  parts.push(
    `<rect x="${px(left)}" y="${px(top)}" width="${px(right - left)}" ` +
      `height="${px(bottom - top)}" fill="none" stroke="#444" stroke-width="1"/>`
  );
  parts.push(
    `<text x="${px((left + right) / 2)}" y="${px(top - 10)}" ` +
      `text-anchor="middle" font-size="13">theta = ${formatTheta(theta)}</text>`
  );

  // x ticks at the data levels, labeled 2^-i
  for (const r of rows) {
    const xv = scale.x(Math.log2(r.delta));
    parts.push(
      `<line x1="${px(xv)}" y1="${px(bottom)}" x2="${px(xv)}" ` +
        `y2="${px(bottom + 4)}" stroke="#444" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${px(xv)}" y="${px(bottom + 16)}" text-anchor="middle" ` +
        `font-size="10">2^-${r.deltaExp}</text>`
    );
  }
  parts.push(
    `<text x="${px((left + right) / 2)}" y="${px(bottom + 32)}" ` +
      `text-anchor="middle" font-size="11">stepsize</text>`
  );

  // y ticks at integer log2 values
  const step = scale.yMax - scale.yMin > 12 ? 2 : 1;
  for (
    let k = Math.ceil(scale.yMin);
    k <= Math.floor(scale.yMax);
    k += step
  ) {
    const yv = scale.y(k);
    parts.push(
      `<line x1="${px(left - 4)}" y1="${px(yv)}" x2="${px(left)}" ` +
        `y2="${px(yv)}" stroke="#444" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${px(left - 7)}" y="${px(yv + 3)}" text-anchor="end" ` +
        `font-size="10">2^${k}</text>`
    );
  }
  if (index === 0) {
    parts.push(
      `<text x="${px(originX + 14)}" y="${px((top + bottom) / 2)}" ` +
        `text-anchor="middle" font-size="11" ` +
        `transform="rotate(-90 ${px(originX + 14)} ${px((top + bottom) / 2)})">` +
        `RMS error</text>`
    );
  }

  // dashed reference lines anchored at the coarsest data point
  for (const s of refSlopes) {
    const x0 = Math.min(...xs);
    const y0 = yAnchor + s * (x0 - xAnchor);
    parts.push(
      `<line class="ref-line" data-slope="${s}" ` +
        `x1="${px(scale.x(x0))}" y1="${px(scale.y(y0))}" ` +
        `x2="${px(scale.x(xAnchor))}" y2="${px(scale.y(yAnchor))}" ` +
        `stroke="#888" stroke-width="1" stroke-dasharray="${DASH}"/>`
    );
    parts.push(
      `<text x="${px(scale.x(x0) + 4)}" y="${px(scale.y(y0) - 4)}" ` +
        `font-size="9" fill="#888">order ${s}</text>`
    );
  }

  // the data polyline and its markers
  const pts = rows
    .map((r) => `${px(scale.x(Math.log2(r.delta)))},${px(scale.y(Math.log2(r.rms)))}`)
    .join(" ");
  parts.push(
    `<polyline class="data-line" points="${pts}" fill="none" ` +
      `stroke="#0b62a4" stroke-width="1.5"/>`
  );
  for (const r of rows) {
    parts.push(
      `<circle cx="${px(scale.x(Math.log2(r.delta)))}" ` +
        `cy="${px(scale.y(Math.log2(r.rms)))}" r="2.5" fill="#0b62a4"/>`
    );
  }

  // fitted slope, verbatim from the CSV slope row
  const token = report.slopes.get(theta);
  if (token !== undefined) {
    parts.push(
      `<text class="slope-annotation" data-theta="${formatTheta(theta)}" ` +
        `x="${px(left + 8)}" y="${px(top + 16)}" font-size="10">` +
        `slope = ${token}</text>`
    );
  }
  parts.push("</g>");
  return parts.join("\n");
}

export function buildFigure(
  report: Report,
  refSlopes: number[],
  title?: string
): string {
  const width = report.thetas.length * PANEL_W;
  const height = PANEL_H + (title ? 24 : 0);
  const offsetY = title ? 24 : 0;
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
      `height="${height}" viewBox="0 0 ${width} ${height}" ` +
      `font-family="Menlo, monospace">`
  );
  parts.push(
    `<rect x="0" y="0" width="${width}" height="${height}" fill="white"/>`
  );
  if (title) {
    parts.push(
      `<text x="${px(width / 2)}" y="17" text-anchor="middle" ` +
        `font-size="14">${escapeXml(title)}</text>`
    );
  }
  if (offsetY) parts.push(`<g transform="translate(0 ${offsetY})">`);
  report.thetas.forEach((theta, index) => {
    parts.push(panelSvg(report, theta, refSlopes, index));
  });
  if (offsetY) parts.push("</g>");
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
